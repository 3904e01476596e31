//! Two-part 3D decoder. Part 1 restores spatial resolution with skip
//! connections and attention while keeping the time axis intact; Part 2
//! collapses time with 4x1x1 convolutions until a single frame remains.

use burn::module::Module;
use burn::nn::conv::{Conv3d, Conv3dConfig, ConvTranspose3d, ConvTranspose3dConfig};
use burn::nn::{BatchNorm, BatchNormConfig, PaddingConfig3d, Relu};
use burn::tensor::backend::Backend;
use burn::tensor::Tensor;
use serde::{Deserialize, Serialize};

use smolder_core::config::AttentionKind;

use super::attention::Attention;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DecoderConfig {
    pub attention: AttentionKind,
    pub n_classes: usize,
    /// Channel widths of the five upsampling stages, coarsest first.
    pub part1_channels: [usize; 5],
    pub time_kernel: usize,
    pub n_time_blocks: usize,
    pub seq_len: usize,
}

impl DecoderConfig {
    /// Halve channels per upsample stage starting from the bottleneck width,
    /// capped for desk-scale CPU runs and floored at 8.
    pub fn new(
        attention: AttentionKind,
        n_classes: usize,
        bottleneck_channels: usize,
        width_cap: usize,
        seq_len: usize,
    ) -> Self {
        let mut part1_channels = [0usize; 5];
        let mut width = bottleneck_channels / 2;
        for slot in part1_channels.iter_mut() {
            *slot = width.min(width_cap).max(8);
            width /= 2;
        }
        Self {
            attention,
            n_classes,
            part1_channels,
            time_kernel: 4,
            n_time_blocks: 6,
            seq_len,
        }
    }

    /// seq_len - n_time_blocks * (time_kernel - 1) must equal 2 so the final
    /// 2x1x1 convolution lands on T = 1.
    pub fn check_time_arithmetic(&self) -> Result<(), String> {
        let shrink = self.n_time_blocks * (self.time_kernel - 1);
        if self.seq_len < shrink + 2 || self.seq_len - shrink != 2 {
            return Err(format!(
                "seq_len {} with {} time blocks of kernel {} does not reduce to 2",
                self.seq_len, self.n_time_blocks, self.time_kernel
            ));
        }
        Ok(())
    }
}

/// 3x3x3 convolution with padding 1 on every axis, batch norm, ReLU; keeps
/// (T, h, w) unchanged.
#[derive(Module, Debug)]
struct ConvBlock3d<B: Backend> {
    conv: Conv3d<B>,
    bn: BatchNorm<B>,
    relu: Relu,
}

impl<B: Backend> ConvBlock3d<B> {
    fn new(cin: usize, cout: usize, device: &B::Device) -> Self {
        Self {
            conv: Conv3dConfig::new([cin, cout], [3, 3, 3])
                .with_padding(PaddingConfig3d::Explicit(1, 1, 1))
                .with_bias(false)
                .init(device),
            bn: BatchNormConfig::new(cout).init(device),
            relu: Relu::new(),
        }
    }

    fn forward(&self, x: Tensor<B, 5>) -> Tensor<B, 5> {
        self.relu.forward(self.bn.forward(self.conv.forward(x)))
    }
}

/// One Part-1 stage: conv block, attention, then a 1x2x2 transposed
/// convolution doubling height and width.
#[derive(Module, Debug)]
struct UpStage<B: Backend> {
    conv: ConvBlock3d<B>,
    attention: Attention<B>,
    up: ConvTranspose3d<B>,
}

impl<B: Backend> UpStage<B> {
    fn new(cin: usize, cout: usize, attention: AttentionKind, device: &B::Device) -> Self {
        Self {
            conv: ConvBlock3d::new(cin, cout, device),
            attention: Attention::new(attention, cout, device),
            up: ConvTranspose3dConfig::new([cout, cout], [1, 2, 2])
                .with_stride([1, 2, 2])
                .init(device),
        }
    }

    fn forward(&self, x: Tensor<B, 5>) -> Tensor<B, 5> {
        let x = self.conv.forward(x);
        let x = self.attention.forward(x);
        self.up.forward(x)
    }
}

/// Part 1: from the /32 bottleneck, four upsample stages each concatenate
/// the matching skip level; a fifth reaches full resolution, and a 1x1x1
/// projection yields n_classes channels at every time step.
#[derive(Module, Debug)]
pub struct DecoderPart1<B: Backend> {
    stages: Vec<UpStage<B>>,
    project: Conv3d<B>,
}

impl<B: Backend> DecoderPart1<B> {
    pub fn new(level_channels: [usize; 5], cfg: &DecoderConfig, device: &B::Device) -> Self {
        let w = cfg.part1_channels;
        let mut stages = Vec::with_capacity(5);
        let mut cin = level_channels[4];
        for stage in 0..5 {
            stages.push(UpStage::new(cin, w[stage], cfg.attention, device));
            cin = if stage < 4 {
                // After upsampling, the skip from the next-finer level is
                // concatenated along channels.
                w[stage] + level_channels[3 - stage]
            } else {
                w[stage]
            };
        }
        Self {
            stages,
            project: Conv3dConfig::new([w[4], cfg.n_classes], [1, 1, 1]).init(device),
        }
    }

    /// `pyramid` is finest-first; output is (N, n_classes, T, H, W).
    pub fn forward(&self, pyramid: [Tensor<B, 5>; 5]) -> Tensor<B, 5> {
        let [l1, l2, l3, l4, l5] = pyramid;
        let mut x = self.stages[0].forward(l5);
        x = Tensor::cat(vec![x, l4], 1);
        x = self.stages[1].forward(x);
        x = Tensor::cat(vec![x, l3], 1);
        x = self.stages[2].forward(x);
        x = Tensor::cat(vec![x, l2], 1);
        x = self.stages[3].forward(x);
        x = Tensor::cat(vec![x, l1], 1);
        x = self.stages[4].forward(x);
        self.project.forward(x)
    }
}

/// Time block: 3D convolution with kernel (time_kernel, 1, 1), no time
/// padding, batch norm, ReLU. Each block shrinks T by time_kernel - 1.
#[derive(Module, Debug)]
struct TimeBlock<B: Backend> {
    conv: Conv3d<B>,
    bn: BatchNorm<B>,
    relu: Relu,
}

impl<B: Backend> TimeBlock<B> {
    fn new(channels: usize, time_kernel: usize, device: &B::Device) -> Self {
        Self {
            conv: Conv3dConfig::new([channels, channels], [time_kernel, 1, 1])
                .with_bias(false)
                .init(device),
            bn: BatchNormConfig::new(channels).init(device),
            relu: Relu::new(),
        }
    }

    fn forward(&self, x: Tensor<B, 5>) -> Tensor<B, 5> {
        self.relu.forward(self.bn.forward(self.conv.forward(x)))
    }
}

/// Part 2: n_time_blocks Time blocks (20 -> 17 -> ... -> 2 at the defaults)
/// followed by a final 2x1x1 convolution reaching T = 1. Spatial dims are
/// untouched.
#[derive(Module, Debug)]
pub struct DecoderPart2<B: Backend> {
    blocks: Vec<TimeBlock<B>>,
    final_conv: Conv3d<B>,
}

impl<B: Backend> DecoderPart2<B> {
    pub fn new(cfg: &DecoderConfig, device: &B::Device) -> Self {
        let blocks = (0..cfg.n_time_blocks)
            .map(|_| TimeBlock::new(cfg.n_classes, cfg.time_kernel, device))
            .collect();
        Self {
            blocks,
            final_conv: Conv3dConfig::new([cfg.n_classes, cfg.n_classes], [2, 1, 1]).init(device),
        }
    }

    pub fn forward(&self, x: Tensor<B, 5>) -> Tensor<B, 5> {
        self.forward_traced(x).0
    }

    /// Forward pass that also reports the time-axis length entering each
    /// block and leaving the final convolution.
    pub fn forward_traced(&self, x: Tensor<B, 5>) -> (Tensor<B, 5>, Vec<usize>) {
        let mut lengths = vec![x.dims()[2]];
        let mut x = x;
        for block in &self.blocks {
            x = block.forward(x);
            lengths.push(x.dims()[2]);
        }
        x = self.final_conv.forward(x);
        lengths.push(x.dims()[2]);
        (x, lengths)
    }
}
