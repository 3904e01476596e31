//! Clip inference and stride-based sliding-window video inference.

use burn::tensor::activation::sigmoid;
use burn::tensor::Tensor;
use ndarray::{Array2, Array3};

use smolder_core::mask::BinaryMask;

use crate::data::{clip_to_data, tensor_to_array2};
use crate::error::{Error, Result};
use crate::model::Segmenter;
use crate::Cpu;

/// Per-pixel fire probabilities for one clip.
#[derive(Debug, Clone)]
pub struct SegmentationMap {
    pub probs: Array2<f32>,
}

impl SegmentationMap {
    pub fn binarize(&self, threshold: f64) -> BinaryMask {
        let (h, w) = self.probs.dim();
        BinaryMask::from_fn(h, w, |r, c| self.probs[[r, c]] as f64 >= threshold)
    }
}

/// One sliding-window output: probabilities aligned to the last frame of
/// the window they were computed from.
#[derive(Debug, Clone)]
pub struct WindowPrediction {
    /// Index of the frame this map is aligned to (last frame of the window).
    pub frame_index: usize,
    pub map: SegmentationMap,
}

/// Number of windows a stride-`stride` sweep of length-`window` clips
/// produces over `n_frames` frames: floor((n - window) / stride) + 1,
/// or 0 when the video is shorter than one window.
pub fn window_count(n_frames: usize, window: usize, stride: usize) -> usize {
    if n_frames < window || window == 0 || stride == 0 {
        return 0;
    }
    (n_frames - window) / stride + 1
}

/// Run one clip (T frames of (H, W, 3)) through the model.
pub fn predict_clip(
    model: &Segmenter<Cpu>,
    frames: &[Array3<f32>],
    seq_len: usize,
) -> Result<SegmentationMap> {
    if frames.len() != seq_len {
        return Err(Error::Inference(format!(
            "clip has {} frames, model expects {seq_len}",
            frames.len()
        )));
    }
    let device = Default::default();
    let input = Tensor::<Cpu, 5>::from_data(clip_to_data(frames), &device);
    let logits = model.forward(input, seq_len)?;
    let [_, classes, h, w] = logits.dims();
    if classes != 1 {
        return Err(Error::Inference(format!(
            "expected a single output class, model produced {classes}"
        )));
    }
    let probs = tensor_to_array2(sigmoid(logits).reshape([h, w]));
    Ok(SegmentationMap { probs })
}

/// Slide a length-`seq_len` window over the video with the given stride.
/// Window k covers frames [k·stride, k·stride + seq_len) and its output is
/// aligned to the window's last frame; the first seq_len − 1 frames have no
/// prediction and overlapping windows are not averaged.
pub fn sliding_window_infer(
    model: &Segmenter<Cpu>,
    frames: &[Array3<f32>],
    seq_len: usize,
    stride: usize,
) -> Result<Vec<WindowPrediction>> {
    if stride == 0 {
        return Err(Error::Inference("stride must be >= 1".to_string()));
    }
    let n = window_count(frames.len(), seq_len, stride);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let start = k * stride;
        let map = predict_clip(model, &frames[start..start + seq_len], seq_len)?;
        out.push(WindowPrediction {
            frame_index: start + seq_len - 1,
            map,
        });
    }
    Ok(out)
}
