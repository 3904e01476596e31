//! The full segmentation network: per-frame 2D encoding, temporal stacking,
//! and the two-part 3D decoder producing one fire map per clip.

pub mod attention;
pub mod backbone;
pub mod decoder;

use burn::module::{AutodiffModule, Module};
use burn::tensor::backend::{AutodiffBackend, Backend};
use burn::tensor::Tensor;
use serde::{Deserialize, Serialize};

use smolder_core::config::{ModelConfig, RunConfig};

use crate::error::{Error, Result};
use backbone::{level_channels, Backbone, BackboneSpec};
use decoder::{DecoderConfig, DecoderPart1, DecoderPart2};

/// Everything needed to rebuild a [`Segmenter`] skeleton, stored alongside
/// checkpoint weights.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelMeta {
    pub backbone: BackboneSpec,
    pub decoder: DecoderConfig,
}

impl ModelMeta {
    pub fn from_run_config(cfg: &RunConfig) -> Result<Self> {
        let ModelConfig {
            backbone,
            attention,
            pretrained,
            n_classes,
            time_kernel,
            n_time_blocks,
            decoder_width_cap,
            ..
        } = cfg.model.clone();
        let spec = BackboneSpec::new(backbone, pretrained);
        let mut decoder = DecoderConfig::new(
            attention,
            n_classes,
            spec.level_channels[4],
            decoder_width_cap,
            cfg.dataset.seq_len,
        );
        decoder.time_kernel = time_kernel;
        decoder.n_time_blocks = n_time_blocks;
        decoder.check_time_arithmetic().map_err(Error::Shape)?;
        Ok(Self {
            backbone: spec,
            decoder,
        })
    }
}

#[derive(Module, Debug)]
pub struct Segmenter<B: Backend> {
    backbone: Backbone<B>,
    part1: DecoderPart1<B>,
    part2: DecoderPart2<B>,
}

impl<B: Backend> Segmenter<B> {
    pub fn new(meta: &ModelMeta, device: &B::Device) -> Self {
        let channels = level_channels(meta.backbone.family);
        Self {
            backbone: Backbone::new(meta.backbone.family, device),
            part1: DecoderPart1::new(channels, &meta.decoder, device),
            part2: DecoderPart2::new(&meta.decoder, device),
        }
    }

    fn check_input(&self, dims: [usize; 5], seq_len: usize) -> Result<()> {
        let [_, c, t, h, w] = dims;
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 input channels, got {c}")));
        }
        if t != seq_len {
            return Err(Error::Shape(format!(
                "clip length {t} does not match model sequence length {seq_len}"
            )));
        }
        if h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Shape(format!(
                "frame resolution {h}x{w} is not divisible by 32"
            )));
        }
        Ok(())
    }

    fn decode(
        &self,
        pyramid: [Tensor<B, 4>; 5],
        batch: usize,
        seq_len: usize,
    ) -> Result<(Tensor<B, 4>, Vec<usize>)> {
        let fps = backbone::unfold_time(pyramid, batch, seq_len);
        let part1_out = self.part1.forward(fps);
        let (out, trace) = self.part2.forward_traced(part1_out);
        let [n_out, classes, t_out, h_out, w_out] = out.dims();
        if t_out != 1 {
            return Err(Error::Shape(format!(
                "decoder left {t_out} time steps, expected 1"
            )));
        }
        Ok((out.reshape([n_out, classes, h_out, w_out]), trace))
    }

    /// Map clips (N, 3, T, H, W) to logits (N, n_classes, H, W), reporting
    /// the Part-2 time-axis trace.
    pub fn forward_traced(
        &self,
        clips: Tensor<B, 5>,
        seq_len: usize,
    ) -> Result<(Tensor<B, 4>, Vec<usize>)> {
        let dims = clips.dims();
        self.check_input(dims, seq_len)?;
        let [n, _, t, h, w] = dims;

        // The encoder is strictly 2D: fold time into the batch axis.
        let frames = clips.swap_dims(1, 2).reshape([n * t, 3, h, w]);
        let pyramid = self.backbone.extract_pyramid(frames);
        self.decode(pyramid, n, t)
    }

    pub fn forward(&self, clips: Tensor<B, 5>, seq_len: usize) -> Result<Tensor<B, 4>> {
        Ok(self.forward_traced(clips, seq_len)?.0)
    }
}

impl<B: AutodiffBackend> Segmenter<B> {
    /// Like [`Self::forward_traced`], but with `freeze_encoder` the backbone
    /// runs on the inner backend: no gradients flow into it and, crucially,
    /// no autodiff graph is recorded for it. Detaching the pyramid instead
    /// would leave the encoder's recorded graph unconsumed by `backward`,
    /// accumulating memory every step.
    pub fn forward_frozen_traced(
        &self,
        clips: Tensor<B, 5>,
        seq_len: usize,
        freeze_encoder: bool,
    ) -> Result<(Tensor<B, 4>, Vec<usize>)> {
        if !freeze_encoder {
            return self.forward_traced(clips, seq_len);
        }
        let dims = clips.dims();
        self.check_input(dims, seq_len)?;
        let [n, _, t, h, w] = dims;

        let frames = clips.swap_dims(1, 2).reshape([n * t, 3, h, w]);
        let pyramid = self
            .backbone
            .valid()
            .extract_pyramid(frames.inner())
            .map(Tensor::from_inner);
        self.decode(pyramid, n, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use burn::backend::NdArray;
    use smolder_core::config::{AttentionKind, BackboneFamily};

    type B = NdArray<f32>;

    fn meta(family: BackboneFamily, seq_len: usize) -> ModelMeta {
        let spec = BackboneSpec::new(family, false);
        let decoder =
            DecoderConfig::new(AttentionKind::Scse, 1, spec.level_channels[4], 16, seq_len);
        ModelMeta {
            backbone: spec,
            decoder,
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let device = Default::default();
        let m = meta(BackboneFamily::Mobilenet, 20);
        let model = Segmenter::<B>::new(&m, &device);
        let wrong_t = Tensor::zeros([1, 3, 19, 64, 64], &device);
        assert!(matches!(model.forward(wrong_t, 20), Err(Error::Shape(_))));
        let wrong_hw = Tensor::zeros([1, 3, 20, 60, 64], &device);
        assert!(matches!(model.forward(wrong_hw, 20), Err(Error::Shape(_))));
    }

    #[test]
    fn forward_contract_smallest_model() {
        let device = Default::default();
        // seq_len 5 with one time block of kernel 4 keeps the test quick:
        // 5 - 1*3 = 2.
        let mut m = meta(BackboneFamily::Mobilenet, 5);
        m.decoder.n_time_blocks = 1;
        m.decoder.check_time_arithmetic().unwrap();
        let model = Segmenter::<B>::new(&m, &device);
        let x = Tensor::zeros([1, 3, 5, 32, 32], &device);
        let (y, trace) = model.forward_traced(x, 5).unwrap();
        assert_eq!(y.dims(), [1, 1, 32, 32]);
        assert_eq!(trace, vec![5, 2, 1]);
    }
}
