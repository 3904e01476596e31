//! Microbenchmarks for the heavy pieces of one training step.

use std::time::Instant;

use burn::module::AutodiffModule;
use burn::optim::{AdamConfig, GradientsParams, Optimizer};
use burn::tensor::activation::sigmoid;
use burn::tensor::{Distribution, Tensor};

use smolder::model::{backbone::BackboneSpec, decoder::DecoderConfig, ModelMeta, Segmenter};
use smolder::train::dice_loss;
use smolder::{Cpu, CpuAutodiff};
use smolder_core::config::{AttentionKind, BackboneFamily};

fn time<T>(label: &str, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    println!("{label}: {:?}", t.elapsed());
    out
}

fn main() {
    let device = Default::default();
    let spec = BackboneSpec::new(BackboneFamily::Mobilenet, false);
    let decoder = DecoderConfig::new(AttentionKind::Scse, 1, spec.level_channels[4], 8, 20);
    let meta = ModelMeta {
        backbone: spec,
        decoder,
    };

    // Inference-mode forward.
    let model = Segmenter::<Cpu>::new(&meta, &device);
    let x1 = Tensor::<Cpu, 5>::random([1, 3, 20, 64, 64], Distribution::Default, &device);
    time("eval forward batch1 (cold)", || {
        model.forward(x1.clone(), 20).unwrap()
    });
    time("eval forward batch1 (warm)", || {
        model.forward(x1.clone(), 20).unwrap()
    });

    // Autodiff forward/backward/step.
    let ad_model = Segmenter::<CpuAutodiff>::new(&meta, &device);
    let mut optim = AdamConfig::new().init();
    for batch in [1usize, 4] {
        let x = Tensor::<CpuAutodiff, 5>::random(
            [batch, 3, 20, 64, 64],
            Distribution::Default,
            &device,
        );
        let g = Tensor::<CpuAutodiff, 3>::random(
            [batch, 64, 64],
            Distribution::Uniform(0.0, 1.0),
            &device,
        )
        .greater_elem(0.5)
        .float();
        let logits = time(&format!("ad forward batch{batch}"), || {
            ad_model.forward(x, 20).unwrap()
        });
        let probs = sigmoid(logits).reshape([batch, 64, 64]);
        let loss = dice_loss(probs, g, 1e-6).unwrap();
        let grads = time(&format!("backward batch{batch}"), || loss.backward());
        let grads = GradientsParams::from_grads(grads, &ad_model);
        let m2 = ad_model.clone();
        time(&format!("adam step batch{batch}"), || {
            optim.step(3e-3, m2, grads)
        });
    }

    // Eval of 8 clips (as mean_dice does, without mask conversion).
    let xv = Tensor::<Cpu, 5>::random([1, 3, 20, 64, 64], Distribution::Default, &device);
    let vm = ad_model.valid();
    time("8 eval forwards", || {
        for _ in 0..8 {
            vm.forward(xv.clone(), 20).unwrap();
        }
    });
}
