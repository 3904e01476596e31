//! Attention blocks adapted to (batch, channels, time, height, width)
//! volumes: the channel gate pools over all of (T, h, w); the spatial gate
//! convolves with a 1x7x7 kernel.

use burn::module::Module;
use burn::nn::conv::{Conv3d, Conv3dConfig};
use burn::nn::{Linear, LinearConfig, PaddingConfig3d, Relu};
use burn::tensor::activation::sigmoid;
use burn::tensor::backend::Backend;
use burn::tensor::Tensor;

use smolder_core::config::AttentionKind;

fn squeeze_hidden(channels: usize) -> usize {
    (channels / 16).max(1)
}

/// Concurrent spatial and channel squeeze-and-excitation; the two gated
/// paths are fused by elementwise max.
#[derive(Module, Debug)]
pub struct ScseBlock<B: Backend> {
    fc1: Linear<B>,
    fc2: Linear<B>,
    spatial: Conv3d<B>,
    relu: Relu,
}

impl<B: Backend> ScseBlock<B> {
    pub fn new(channels: usize, device: &B::Device) -> Self {
        let hidden = squeeze_hidden(channels);
        Self {
            fc1: LinearConfig::new(channels, hidden).init(device),
            fc2: LinearConfig::new(hidden, channels).init(device),
            spatial: Conv3dConfig::new([channels, 1], [1, 1, 1]).init(device),
            relu: Relu::new(),
        }
    }

    pub fn forward(&self, x: Tensor<B, 5>) -> Tensor<B, 5> {
        let [n, c, _, _, _] = x.dims();
        let z = x.clone().mean_dims(&[2, 3, 4]).reshape([n, c]);
        let gate = sigmoid(self.fc2.forward(self.relu.forward(self.fc1.forward(z))));
        let channel_path = x.clone() * gate.reshape([n, c, 1, 1, 1]);
        let spatial_path = x.clone() * sigmoid(self.spatial.forward(x));
        channel_path.max_pair(spatial_path)
    }
}

/// Sequential channel-then-spatial gating. Channel attention sums a shared
/// MLP over average- and max-pooled descriptors; spatial attention convolves
/// the channelwise mean and max maps.
#[derive(Module, Debug)]
pub struct CbamBlock<B: Backend> {
    fc1: Linear<B>,
    fc2: Linear<B>,
    spatial: Conv3d<B>,
    relu: Relu,
}

impl<B: Backend> CbamBlock<B> {
    pub fn new(channels: usize, device: &B::Device) -> Self {
        let hidden = squeeze_hidden(channels);
        Self {
            fc1: LinearConfig::new(channels, hidden).init(device),
            fc2: LinearConfig::new(hidden, channels).init(device),
            spatial: Conv3dConfig::new([2, 1], [1, 7, 7])
                .with_padding(PaddingConfig3d::Explicit(0, 3, 3))
                .init(device),
            relu: Relu::new(),
        }
    }

    fn mlp(&self, z: Tensor<B, 2>) -> Tensor<B, 2> {
        self.fc2.forward(self.relu.forward(self.fc1.forward(z)))
    }

    pub fn forward(&self, x: Tensor<B, 5>) -> Tensor<B, 5> {
        let [n, c, _, _, _] = x.dims();
        let avg = x.clone().mean_dims(&[2, 3, 4]).reshape([n, c]);
        let max = x.clone().max_dims(&[2, 3, 4]).reshape([n, c]);
        let gate = sigmoid(self.mlp(avg) + self.mlp(max));
        let x = x * gate.reshape([n, c, 1, 1, 1]);

        let savg = x.clone().mean_dim(1);
        let smax = x.clone().max_dim(1);
        let smap = sigmoid(self.spatial.forward(Tensor::cat(vec![savg, smax], 1)));
        x * smap
    }
}

#[derive(Module, Debug)]
pub enum Attention<B: Backend> {
    Scse(ScseBlock<B>),
    Cbam(CbamBlock<B>),
}

impl<B: Backend> Attention<B> {
    pub fn new(kind: AttentionKind, channels: usize, device: &B::Device) -> Self {
        match kind {
            AttentionKind::Scse => Attention::Scse(ScseBlock::new(channels, device)),
            AttentionKind::Cbam => Attention::Cbam(CbamBlock::new(channels, device)),
        }
    }

    pub fn forward(&self, x: Tensor<B, 5>) -> Tensor<B, 5> {
        match self {
            Attention::Scse(b) => b.forward(x),
            Attention::Cbam(b) => b.forward(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use burn::backend::NdArray;
    use burn::tensor::Distribution;

    type B = NdArray<f32>;

    #[test]
    fn shape_preserved_and_zero_fixed_point() {
        let device = Default::default();
        for kind in AttentionKind::ALL {
            let attn = Attention::<B>::new(kind, 16, &device);
            let x =
                Tensor::<B, 5>::random([1, 16, 20, 8, 8], Distribution::Normal(0.0, 1.0), &device);
            let y = attn.forward(x);
            assert_eq!(y.dims(), [1, 16, 20, 8, 8]);

            let zeros = Tensor::<B, 5>::zeros([1, 16, 4, 8, 8], &device);
            let z = attn.forward(zeros);
            assert_eq!(z.abs().max().into_scalar(), 0.0);
        }
    }

    #[test]
    fn gates_never_amplify() {
        // Both gate families are sigmoids, so |out| <= |in| elementwise. The
        // ScSE max-fusion picks between two attenuated copies, preserving
        // the bound.
        let device = Default::default();
        for kind in AttentionKind::ALL {
            let attn = Attention::<B>::new(kind, 8, &device);
            for trial in 0..100 {
                let x = Tensor::<B, 5>::random(
                    [1, 8, 3, 4, 4],
                    Distribution::Normal(0.0, 2.0),
                    &device,
                );
                let y = attn.forward(x.clone());
                let excess = (y.abs() - x.abs()).max().into_scalar();
                assert!(
                    excess <= 1e-6,
                    "{} amplified input by {excess} on trial {trial}",
                    match kind {
                        AttentionKind::Scse => "scse",
                        AttentionKind::Cbam => "cbam",
                    }
                );
            }
        }
    }
}
