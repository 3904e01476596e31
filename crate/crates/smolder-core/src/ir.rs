//! IR heat-map labeling: smooth, hard-threshold, refine, and fuse per-frame
//! masks into one clip-level ground truth by per-pixel majority vote.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// A single-channel intensity frame normalized to [0,1].
#[derive(Debug, Clone)]
pub struct IrFrame {
    pixels: Array2<f32>,
    pub frame_index: usize,
}

impl IrFrame {
    pub fn new(pixels: Array2<f32>, frame_index: usize) -> Result<Self> {
        let (h, w) = pixels.dim();
        if h < 32 || w < 32 {
            return Err(Error::input(format!(
                "IR frame must be at least 32x32, got {h}x{w}"
            )));
        }
        for &v in pixels.iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::input(format!(
                    "IR intensity {v} outside [0,1] in frame {frame_index}"
                )));
            }
        }
        Ok(Self {
            pixels,
            frame_index,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    pub fn pixels(&self) -> &Array2<f32> {
        &self.pixels
    }

    pub fn max_intensity(&self) -> f32 {
        self.pixels.iter().copied().fold(0.0, f32::max)
    }
}

/// Parameters of the IR-to-mask chain.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LabelingConfig {
    pub smooth_kernel: usize,
    /// Threshold as a fraction of the per-frame maximum, in (0,1].
    pub threshold_fraction: f32,
    pub dilate_kernel: usize,
    pub dilate_iters: usize,
    pub erode_kernel: usize,
    pub erode_iters: usize,
    pub min_blob_area: usize,
    /// Even-length majority votes split exactly in half resolve to fire.
    pub tie_to_fire: bool,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self {
            smooth_kernel: 5,
            threshold_fraction: 0.85,
            dilate_kernel: 5,
            dilate_iters: 2,
            erode_kernel: 5,
            erode_iters: 1,
            min_blob_area: 200,
            tie_to_fire: true,
        }
    }
}

impl LabelingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, k) in [
            ("labeling.smooth_kernel", self.smooth_kernel),
            ("labeling.dilate_kernel", self.dilate_kernel),
            ("labeling.erode_kernel", self.erode_kernel),
        ] {
            if k % 2 == 0 || k < 3 {
                return Err(Error::config(format!(
                    "{name} must be odd and >= 3, got {k}"
                )));
            }
        }
        if !(self.threshold_fraction > 0.0 && self.threshold_fraction <= 1.0) {
            return Err(Error::config(format!(
                "labeling.threshold_fraction must be in (0,1], got {}",
                self.threshold_fraction
            )));
        }
        Ok(())
    }
}

/// Mean filter with a square kernel; borders replicate the edge pixel.
pub fn smooth_frame(frame: &IrFrame, kernel: usize) -> Result<IrFrame> {
    let (h, w) = frame.dims();
    if kernel.is_multiple_of(2) {
        return Err(Error::config(format!(
            "smoothing kernel must be odd, got {kernel}"
        )));
    }
    if kernel > h.min(w) {
        return Err(Error::config(format!(
            "smoothing kernel {kernel} exceeds frame size {h}x{w}"
        )));
    }
    let radius = (kernel / 2) as i64;
    let norm = (kernel * kernel) as f32;
    let src = frame.pixels();
    let pixels = Array2::from_shape_fn((h, w), |(r, c)| {
        let mut sum = 0.0f32;
        for dr in -radius..=radius {
            for dc in -radius..=radius {
                let nr = (r as i64 + dr).clamp(0, h as i64 - 1) as usize;
                let nc = (c as i64 + dc).clamp(0, w as i64 - 1) as usize;
                sum += src[[nr, nc]];
            }
        }
        (sum / norm).clamp(0.0, 1.0)
    });
    Ok(IrFrame {
        pixels,
        frame_index: frame.frame_index,
    })
}

/// A pixel is fire iff its intensity reaches `threshold_fraction` of the
/// per-frame maximum. An all-zero frame yields an all-zero mask.
pub fn threshold_frame(frame: &IrFrame, threshold_fraction: f32) -> Result<BinaryMask> {
    if !(threshold_fraction > 0.0 && threshold_fraction <= 1.0) {
        return Err(Error::config(format!(
            "threshold_fraction must be in (0,1], got {threshold_fraction}"
        )));
    }
    let max = frame.max_intensity();
    let (h, w) = frame.dims();
    if max == 0.0 {
        return Ok(BinaryMask::zeros(h, w));
    }
    let cut = threshold_fraction * max;
    let src = frame.pixels();
    Ok(BinaryMask::from_fn(h, w, |r, c| src[[r, c]] >= cut))
}

/// Dilate, fill holes, erode, and drop components below the area floor.
pub fn refine_mask(mask: &BinaryMask, cfg: &LabelingConfig) -> Result<BinaryMask> {
    cfg.validate()?;
    let m = mask.dilate_n(cfg.dilate_kernel, cfg.dilate_iters)?;
    let m = m.fill_holes();
    let m = m.erode_n(cfg.erode_kernel, cfg.erode_iters)?;
    Ok(m.remove_small(cfg.min_blob_area))
}

/// The full per-frame chain: smooth, hard-threshold, refine.
pub fn label_ir_frame(frame: &IrFrame, cfg: &LabelingConfig) -> Result<BinaryMask> {
    cfg.validate()?;
    let smoothed = smooth_frame(frame, cfg.smooth_kernel)?;
    let thresholded = threshold_frame(&smoothed, cfg.threshold_fraction)?;
    refine_mask(&thresholded, cfg)
}

/// Per-pixel majority over a stack of masks. A pixel is fire iff at least
/// ceil((T+1)/2) frames label it fire; with `tie_to_fire`, an exact half
/// split for even T also counts as fire.
pub fn majority_vote(masks: &[BinaryMask], tie_to_fire: bool) -> Result<BinaryMask> {
    let first = masks
        .first()
        .ok_or_else(|| Error::input("majority_vote needs at least one mask"))?;
    let (h, w) = first.dims();
    for (i, m) in masks.iter().enumerate() {
        if m.dims() != (h, w) {
            return Err(Error::input(format!(
                "mask {i} has shape {:?}, expected {:?}",
                m.dims(),
                (h, w)
            )));
        }
    }
    let t = masks.len();
    Ok(BinaryMask::from_fn(h, w, |r, c| {
        let count = masks.iter().filter(|m| m.get(r, c)).count();
        if tie_to_fire {
            2 * count >= t
        } else {
            2 * count > t
        }
    }))
}
