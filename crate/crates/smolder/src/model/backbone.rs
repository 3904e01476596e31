//! 2D classification backbones exposing a 5-level feature pyramid at
//! strides 2, 4, 8, 16, and 32. Frames are encoded independently; time is
//! folded into the batch axis by the caller.

use burn::module::Module;
use burn::nn::conv::{Conv2d, Conv2dConfig};
use burn::nn::pool::{MaxPool2d, MaxPool2dConfig};
use burn::nn::{BatchNorm, BatchNormConfig, PaddingConfig2d, Relu};
use burn::tensor::backend::Backend;
use burn::tensor::Tensor;
use serde::{Deserialize, Serialize};

use smolder_core::config::BackboneFamily;

/// Channel widths of the five pyramid levels for each family, finest first.
pub fn level_channels(family: BackboneFamily) -> [usize; 5] {
    match family {
        BackboneFamily::Vgg16 => [64, 128, 256, 512, 512],
        BackboneFamily::Resnet18 => [64, 64, 128, 256, 512],
        BackboneFamily::EfficientnetB0 | BackboneFamily::EfficientnetB1 => [32, 24, 40, 112, 320],
        BackboneFamily::Mobilenet => [16, 24, 32, 96, 320],
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BackboneSpec {
    pub family: BackboneFamily,
    pub pretrained: bool,
    pub level_channels: [usize; 5],
}

impl BackboneSpec {
    pub fn new(family: BackboneFamily, pretrained: bool) -> Self {
        Self {
            family,
            pretrained,
            level_channels: level_channels(family),
        }
    }
}

fn conv3x3(cin: usize, cout: usize, stride: usize) -> Conv2dConfig {
    Conv2dConfig::new([cin, cout], [3, 3])
        .with_stride([stride, stride])
        .with_padding(PaddingConfig2d::Explicit(1, 1, 1, 1))
}

#[derive(Module, Debug)]
struct ConvRelu<B: Backend> {
    conv: Conv2d<B>,
    relu: Relu,
}

impl<B: Backend> ConvRelu<B> {
    fn new(cin: usize, cout: usize, device: &B::Device) -> Self {
        Self {
            conv: conv3x3(cin, cout, 1).init(device),
            relu: Relu::new(),
        }
    }

    fn forward(&self, x: Tensor<B, 4>) -> Tensor<B, 4> {
        self.relu.forward(self.conv.forward(x))
    }
}

#[derive(Module, Debug)]
struct ConvBnRelu<B: Backend> {
    conv: Conv2d<B>,
    bn: BatchNorm<B>,
    relu: Relu,
}

impl<B: Backend> ConvBnRelu<B> {
    fn new(config: Conv2dConfig, device: &B::Device) -> Self {
        let cout = config.channels[1];
        Self {
            conv: config.with_bias(false).init(device),
            bn: BatchNormConfig::new(cout).init(device),
            relu: Relu::new(),
        }
    }

    fn forward(&self, x: Tensor<B, 4>) -> Tensor<B, 4> {
        self.relu.forward(self.bn.forward(self.conv.forward(x)))
    }
}

fn pool2() -> MaxPool2dConfig {
    MaxPool2dConfig::new([2, 2]).with_strides([2, 2])
}

// ---------------------------------------------------------------------------
// VGG16: conv stacks 2-2-3-3-3 with a 2x2 max pool closing each stage.

#[derive(Module, Debug)]
pub struct Vgg16<B: Backend> {
    stages: Vec<Vec<ConvRelu<B>>>,
    pool: MaxPool2d,
}

impl<B: Backend> Vgg16<B> {
    fn new(device: &B::Device) -> Self {
        let plan: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];
        let mut cin = 3;
        let mut stages = Vec::new();
        for (width, depth) in plan {
            let mut stage = Vec::new();
            for _ in 0..depth {
                stage.push(ConvRelu::new(cin, width, device));
                cin = width;
            }
            stages.push(stage);
        }
        Self {
            stages,
            pool: pool2().init(),
        }
    }

    fn forward(&self, x: Tensor<B, 4>) -> [Tensor<B, 4>; 5] {
        let mut x = x;
        let mut taps = Vec::with_capacity(5);
        for stage in &self.stages {
            for conv in stage {
                x = conv.forward(x);
            }
            x = self.pool.forward(x);
            taps.push(x.clone());
        }
        taps.try_into().expect("five stages")
    }
}

// ---------------------------------------------------------------------------
// ResNet18: 7x7 stem plus four stages of two basic blocks.

#[derive(Module, Debug)]
struct BasicBlock<B: Backend> {
    conv1: Conv2d<B>,
    bn1: BatchNorm<B>,
    conv2: Conv2d<B>,
    bn2: BatchNorm<B>,
    downsample: Option<ConvBnRelu<B>>,
    relu: Relu,
}

impl<B: Backend> BasicBlock<B> {
    fn new(cin: usize, cout: usize, stride: usize, device: &B::Device) -> Self {
        let downsample = (stride != 1 || cin != cout).then(|| {
            ConvBnRelu::new(
                Conv2dConfig::new([cin, cout], [1, 1]).with_stride([stride, stride]),
                device,
            )
        });
        Self {
            conv1: conv3x3(cin, cout, stride).with_bias(false).init(device),
            bn1: BatchNormConfig::new(cout).init(device),
            conv2: conv3x3(cout, cout, 1).with_bias(false).init(device),
            bn2: BatchNormConfig::new(cout).init(device),
            downsample,
            relu: Relu::new(),
        }
    }

    fn forward(&self, x: Tensor<B, 4>) -> Tensor<B, 4> {
        let identity = match &self.downsample {
            // Projection shortcut; the trailing relu matches the main path.
            Some(d) => d.bn.forward(d.conv.forward(x.clone())),
            None => x.clone(),
        };
        let y = self.relu.forward(self.bn1.forward(self.conv1.forward(x)));
        let y = self.bn2.forward(self.conv2.forward(y));
        self.relu.forward(y + identity)
    }
}

#[derive(Module, Debug)]
pub struct Resnet18<B: Backend> {
    stem: ConvBnRelu<B>,
    maxpool: MaxPool2d,
    layers: Vec<Vec<BasicBlock<B>>>,
}

impl<B: Backend> Resnet18<B> {
    fn new(device: &B::Device) -> Self {
        let stem = ConvBnRelu::new(
            Conv2dConfig::new([3, 64], [7, 7])
                .with_stride([2, 2])
                .with_padding(PaddingConfig2d::Explicit(3, 3, 3, 3)),
            device,
        );
        let plan: [(usize, usize); 4] = [(64, 1), (128, 2), (256, 2), (512, 2)];
        let mut cin = 64;
        let mut layers = Vec::new();
        for (width, stride) in plan {
            layers.push(vec![
                BasicBlock::new(cin, width, stride, device),
                BasicBlock::new(width, width, 1, device),
            ]);
            cin = width;
        }
        Self {
            stem,
            maxpool: MaxPool2dConfig::new([3, 3])
                .with_strides([2, 2])
                .with_padding(PaddingConfig2d::Explicit(1, 1, 1, 1))
                .init(),
            layers,
        }
    }

    fn forward(&self, x: Tensor<B, 4>) -> [Tensor<B, 4>; 5] {
        let mut taps = Vec::with_capacity(5);
        let mut x = self.stem.forward(x);
        taps.push(x.clone());
        x = self.maxpool.forward(x);
        for layer in &self.layers {
            for block in layer {
                x = block.forward(x);
            }
            taps.push(x.clone());
        }
        taps.try_into().expect("five taps")
    }
}

// ---------------------------------------------------------------------------
// Inverted residual (MBConv) block shared by EfficientNet and MobileNetV2:
// pointwise expansion, depthwise 3x3, linear projection, skip when shapes
// allow.

#[derive(Module, Debug)]
struct InvertedResidual<B: Backend> {
    expand: Option<ConvBnRelu<B>>,
    depthwise: ConvBnRelu<B>,
    project: Conv2d<B>,
    project_bn: BatchNorm<B>,
    use_skip: bool,
}

impl<B: Backend> InvertedResidual<B> {
    fn new(
        cin: usize,
        cout: usize,
        stride: usize,
        expand_ratio: usize,
        device: &B::Device,
    ) -> Self {
        let mid = cin * expand_ratio;
        let expand = (expand_ratio != 1)
            .then(|| ConvBnRelu::new(Conv2dConfig::new([cin, mid], [1, 1]), device));
        let depthwise = ConvBnRelu::new(conv3x3(mid, mid, stride).with_groups(mid), device);
        Self {
            expand,
            depthwise,
            project: Conv2dConfig::new([mid, cout], [1, 1])
                .with_bias(false)
                .init(device),
            project_bn: BatchNormConfig::new(cout).init(device),
            use_skip: stride == 1 && cin == cout,
        }
    }

    fn forward(&self, x: Tensor<B, 4>) -> Tensor<B, 4> {
        let mut y = x.clone();
        if let Some(e) = &self.expand {
            y = e.forward(y);
        }
        y = self.depthwise.forward(y);
        y = self.project_bn.forward(self.project.forward(y));
        if self.use_skip {
            y + x
        } else {
            y
        }
    }
}

/// (out_channels, repeats, stride, expand_ratio) and whether a pyramid tap
/// follows the stage.
struct StagePlan {
    width: usize,
    repeats: usize,
    stride: usize,
    expand: usize,
    tap: bool,
}

#[derive(Module, Debug)]
pub struct MbConvNet<B: Backend> {
    stem: ConvBnRelu<B>,
    stages: Vec<Vec<InvertedResidual<B>>>,
    tap_after: Vec<bool>,
    stem_tap: bool,
}

impl<B: Backend> MbConvNet<B> {
    fn new(stem_width: usize, stem_tap: bool, plan: &[StagePlan], device: &B::Device) -> Self {
        let stem = ConvBnRelu::new(conv3x3(3, stem_width, 2), device);
        let mut cin = stem_width;
        let mut stages = Vec::new();
        let mut tap_after = Vec::new();
        for s in plan {
            let mut blocks = Vec::new();
            for i in 0..s.repeats {
                let stride = if i == 0 { s.stride } else { 1 };
                blocks.push(InvertedResidual::new(
                    cin, s.width, stride, s.expand, device,
                ));
                cin = s.width;
            }
            stages.push(blocks);
            tap_after.push(s.tap);
        }
        Self {
            stem,
            stages,
            tap_after,
            stem_tap,
        }
    }

    fn efficientnet(deep: bool, device: &B::Device) -> Self {
        // b0 depths, with b1 adding roughly one block per stage.
        let d = |r: usize| if deep { r + 1 } else { r };
        let plan = [
            StagePlan {
                width: 16,
                repeats: d(1),
                stride: 1,
                expand: 1,
                tap: false,
            },
            StagePlan {
                width: 24,
                repeats: d(2),
                stride: 2,
                expand: 6,
                tap: true,
            },
            StagePlan {
                width: 40,
                repeats: d(2),
                stride: 2,
                expand: 6,
                tap: true,
            },
            StagePlan {
                width: 80,
                repeats: d(3),
                stride: 2,
                expand: 6,
                tap: false,
            },
            StagePlan {
                width: 112,
                repeats: d(3),
                stride: 1,
                expand: 6,
                tap: true,
            },
            StagePlan {
                width: 192,
                repeats: d(4),
                stride: 2,
                expand: 6,
                tap: false,
            },
            StagePlan {
                width: 320,
                repeats: d(1),
                stride: 1,
                expand: 6,
                tap: true,
            },
        ];
        Self::new(32, true, &plan, device)
    }

    fn mobilenet_v2(device: &B::Device) -> Self {
        let plan = [
            StagePlan {
                width: 16,
                repeats: 1,
                stride: 1,
                expand: 1,
                tap: true,
            },
            StagePlan {
                width: 24,
                repeats: 2,
                stride: 2,
                expand: 6,
                tap: true,
            },
            StagePlan {
                width: 32,
                repeats: 3,
                stride: 2,
                expand: 6,
                tap: true,
            },
            StagePlan {
                width: 64,
                repeats: 4,
                stride: 2,
                expand: 6,
                tap: false,
            },
            StagePlan {
                width: 96,
                repeats: 3,
                stride: 1,
                expand: 6,
                tap: true,
            },
            StagePlan {
                width: 160,
                repeats: 3,
                stride: 2,
                expand: 6,
                tap: false,
            },
            StagePlan {
                width: 320,
                repeats: 1,
                stride: 1,
                expand: 6,
                tap: true,
            },
        ];
        Self::new(32, false, &plan, device)
    }

    fn forward(&self, x: Tensor<B, 4>) -> [Tensor<B, 4>; 5] {
        let mut taps = Vec::with_capacity(5);
        let mut x = self.stem.forward(x);
        if self.stem_tap {
            taps.push(x.clone());
        }
        for (stage, &tap) in self.stages.iter().zip(&self.tap_after) {
            for block in stage {
                x = block.forward(x);
            }
            if tap {
                taps.push(x.clone());
            }
        }
        taps.try_into().expect("five taps")
    }
}

// ---------------------------------------------------------------------------

#[derive(Module, Debug)]
pub enum Backbone<B: Backend> {
    Vgg16(Vgg16<B>),
    Resnet18(Resnet18<B>),
    EfficientNet(MbConvNet<B>),
    MobileNet(MbConvNet<B>),
}

impl<B: Backend> Backbone<B> {
    pub fn new(family: BackboneFamily, device: &B::Device) -> Self {
        match family {
            BackboneFamily::Vgg16 => Backbone::Vgg16(Vgg16::new(device)),
            BackboneFamily::Resnet18 => Backbone::Resnet18(Resnet18::new(device)),
            BackboneFamily::EfficientnetB0 => {
                Backbone::EfficientNet(MbConvNet::efficientnet(false, device))
            }
            BackboneFamily::EfficientnetB1 => {
                Backbone::EfficientNet(MbConvNet::efficientnet(true, device))
            }
            BackboneFamily::Mobilenet => Backbone::MobileNet(MbConvNet::mobilenet_v2(device)),
        }
    }

    /// Five feature maps at strides 2..32, finest first. Input spatial dims
    /// must be divisible by 32.
    pub fn extract_pyramid(&self, frames: Tensor<B, 4>) -> [Tensor<B, 4>; 5] {
        match self {
            Backbone::Vgg16(m) => m.forward(frames),
            Backbone::Resnet18(m) => m.forward(frames),
            Backbone::EfficientNet(m) | Backbone::MobileNet(m) => m.forward(frames),
        }
    }
}

/// Stack per-frame pyramids along a new time axis: level l of the result is
/// (batch, C_l, T, h_l, w_l) with stack index equal to frame index.
pub fn stack_temporal<B: Backend>(
    per_frame: Vec<[Tensor<B, 4>; 5]>,
) -> Result<[Tensor<B, 5>; 5], String> {
    if per_frame.is_empty() {
        return Err("cannot stack an empty pyramid sequence".to_string());
    }
    let mut levels: Vec<Vec<Tensor<B, 4>>> = (0..5).map(|_| Vec::new()).collect();
    let reference: Vec<[usize; 4]> = per_frame[0].iter().map(|t| t.dims()).collect();
    for (t, pyramid) in per_frame.into_iter().enumerate() {
        for (l, level) in pyramid.into_iter().enumerate() {
            if level.dims() != reference[l] {
                return Err(format!(
                    "frame {t} level {l} has shape {:?}, expected {:?}",
                    level.dims(),
                    reference[l]
                ));
            }
            levels[l].push(level);
        }
    }
    let stacked: Vec<Tensor<B, 5>> = levels
        .into_iter()
        .map(|frames| Tensor::stack(frames, 2))
        .collect();
    Ok(stacked.try_into().expect("five levels"))
}

/// Reshape an already-batched encoding (N*T folded into the batch axis) back
/// into (N, C, T, h, w) per level.
pub fn unfold_time<B: Backend>(
    levels: [Tensor<B, 4>; 5],
    batch: usize,
    seq_len: usize,
) -> [Tensor<B, 5>; 5] {
    levels.map(|level| {
        let [nt, c, h, w] = level.dims();
        debug_assert_eq!(nt, batch * seq_len);
        level.reshape([batch, seq_len, c, h, w]).swap_dims(1, 2)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use burn::backend::NdArray;

    type B = NdArray<f32>;

    #[test]
    fn pyramid_shapes_at_64() {
        let device = Default::default();
        for family in BackboneFamily::ALL {
            let bb = Backbone::<B>::new(family, &device);
            let x = Tensor::<B, 4>::zeros([1, 3, 64, 64], &device);
            let pyramid = bb.extract_pyramid(x);
            let channels = level_channels(family);
            for (l, level) in pyramid.iter().enumerate() {
                let scale = 2usize.pow(l as u32 + 1);
                assert_eq!(
                    level.dims(),
                    [1, channels[l], 64 / scale, 64 / scale],
                    "{} level {l}",
                    family.name()
                );
            }
        }
    }

    #[test]
    fn stack_temporal_orders_time() {
        let device = Default::default();
        let bb = Backbone::<B>::new(BackboneFamily::Mobilenet, &device);
        let frames: Vec<[Tensor<B, 4>; 5]> = (0..3)
            .map(|t| bb.extract_pyramid(Tensor::full([1, 3, 32, 32], t as f32, &device)))
            .collect();
        let expected: Vec<Tensor<B, 4>> = frames.iter().map(|p| p[0].clone()).collect();
        let fps = stack_temporal(frames).unwrap();
        assert_eq!(fps[0].dims(), [1, 16, 3, 16, 16]);
        for (t, exp) in expected.iter().enumerate() {
            let slice = fps[0]
                .clone()
                .slice([0..1, 0..16, t..t + 1, 0..16, 0..16])
                .reshape([1, 16, 16, 16]);
            let diff = (slice - exp.clone()).abs().max().into_scalar();
            assert_eq!(diff, 0.0, "time index {t} not preserved");
        }
    }

    #[test]
    fn stack_temporal_rejects_mixed_shapes() {
        let device = Default::default();
        let bb = Backbone::<B>::new(BackboneFamily::Mobilenet, &device);
        let a = bb.extract_pyramid(Tensor::zeros([1, 3, 32, 32], &device));
        let b = bb.extract_pyramid(Tensor::zeros([1, 3, 64, 64], &device));
        assert!(stack_temporal(vec![a, b]).is_err());
    }

    #[test]
    fn batch_equals_per_frame_concat() {
        // The encoder must be strictly per-frame: encoding two frames as a
        // batch matches encoding them separately.
        let device = Default::default();
        let bb = Backbone::<B>::new(BackboneFamily::Mobilenet, &device);
        let f0 = Tensor::<B, 4>::full([1, 3, 32, 32], 0.3, &device);
        let f1 = Tensor::<B, 4>::full([1, 3, 32, 32], 0.8, &device);
        let batch = Tensor::cat(vec![f0.clone(), f1.clone()], 0);
        let joint = bb.extract_pyramid(batch);
        let solo0 = bb.extract_pyramid(f0);
        let solo1 = bb.extract_pyramid(f1);
        for l in 0..5 {
            let [_, c, h, w] = solo0[l].dims();
            let j0 = joint[l].clone().slice([0..1, 0..c, 0..h, 0..w]);
            let j1 = joint[l].clone().slice([1..2, 0..c, 0..h, 0..w]);
            let d0 = (j0 - solo0[l].clone()).abs().max().into_scalar();
            let d1 = (j1 - solo1[l].clone()).abs().max().into_scalar();
            assert!(d0 < 1e-5 && d1 < 1e-5, "level {l}: {d0} {d1}");
        }
    }
}
