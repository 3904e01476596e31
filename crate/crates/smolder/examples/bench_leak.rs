//! Track RSS across repeated training-step variants to isolate a leak.

use burn::module::AutodiffModule;
use burn::optim::{AdamConfig, GradientsParams, Optimizer};
use burn::tensor::activation::sigmoid;
use burn::tensor::{Distribution, Tensor};

use smolder::model::{backbone::BackboneSpec, decoder::DecoderConfig, ModelMeta, Segmenter};
use smolder::train::dice_loss;
use smolder::{Cpu, CpuAutodiff};
use smolder_core::config::{AttentionKind, BackboneFamily};

fn rss_mb() -> usize {
    let statm = std::fs::read_to_string("/proc/self/statm").unwrap();
    let pages: usize = statm.split_whitespace().nth(1).unwrap().parse().unwrap();
    pages * 4096 / (1024 * 1024)
}

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "step".into());
    let device = Default::default();
    let spec = BackboneSpec::new(BackboneFamily::Mobilenet, false);
    let decoder = DecoderConfig::new(AttentionKind::Scse, 1, spec.level_channels[4], 8, 20);
    let meta = ModelMeta {
        backbone: spec,
        decoder,
    };
    println!("mode {mode}, start rss {} MB", rss_mb());

    match mode.as_str() {
        "eval" => {
            let model = Segmenter::<Cpu>::new(&meta, &device);
            let x = Tensor::<Cpu, 5>::random([1, 3, 20, 64, 64], Distribution::Default, &device);
            for i in 0..6 {
                let _ = model.forward(x.clone(), 20).unwrap();
                println!("iter {i}: rss {} MB", rss_mb());
            }
        }
        "fwd" => {
            let model = Segmenter::<CpuAutodiff>::new(&meta, &device);
            let x = Tensor::<CpuAutodiff, 5>::random(
                [1, 3, 20, 64, 64],
                Distribution::Default,
                &device,
            );
            for i in 0..6 {
                let _ = model.forward(x.clone(), 20).unwrap();
                println!("iter {i}: rss {} MB", rss_mb());
            }
        }
        "bwd" | "step" | "frozen" => {
            let mut model = Segmenter::<CpuAutodiff>::new(&meta, &device);
            let mut optim = AdamConfig::new().init();
            let x = Tensor::<CpuAutodiff, 5>::random(
                [1, 3, 20, 64, 64],
                Distribution::Default,
                &device,
            );
            let g = Tensor::<CpuAutodiff, 3>::random(
                [1, 64, 64],
                Distribution::Uniform(0.0, 1.0),
                &device,
            )
            .greater_elem(0.5)
            .float();
            for i in 0..6 {
                let logits = model
                    .forward_frozen_traced(x.clone(), 20, mode == "frozen")
                    .unwrap()
                    .0;
                let probs = sigmoid(logits).reshape([1, 64, 64]);
                let loss = dice_loss(probs, g.clone(), 1e-6).unwrap();
                let grads = loss.backward();
                if mode != "bwd" {
                    let grads = GradientsParams::from_grads(grads, &model);
                    model = optim.step(3e-3, model, grads);
                }
                println!("iter {i}: rss {} MB", rss_mb());
            }
            let _ = model.valid();
        }
        other => panic!("unknown mode {other}"),
    }
}
