//! Locate the slow backward: time forward/backward of the encoder, the
//! upsampling decoder, and the time-collapsing stack separately.

use std::time::Instant;

use burn::tensor::{Distribution, Tensor};

use smolder::model::backbone::{Backbone, BackboneSpec};
use smolder::model::decoder::{DecoderConfig, DecoderPart1, DecoderPart2};
use smolder::CpuAutodiff as B;
use smolder_core::config::{AttentionKind, BackboneFamily};

fn main() {
    let device = Default::default();
    let spec = BackboneSpec::new(BackboneFamily::Mobilenet, false);
    let cfg = DecoderConfig::new(AttentionKind::Scse, 1, spec.level_channels[4], 8, 20);

    // Encoder on 20 frames.
    let bb = Backbone::<B>::new(BackboneFamily::Mobilenet, &device);
    let frames =
        Tensor::<B, 4>::random([20, 3, 64, 64], Distribution::Default, &device).require_grad();
    let t = Instant::now();
    let pyr = bb.extract_pyramid(frames.clone());
    println!("encoder forward: {:?}", t.elapsed());
    let t = Instant::now();
    let s = pyr
        .iter()
        .map(|p| p.clone().sum())
        .reduce(|a, b| a + b)
        .unwrap();
    s.backward();
    println!("encoder backward: {:?}", t.elapsed());

    // Part 1 on a synthetic pyramid.
    let ch = spec.level_channels;
    let mk = |c: usize, s: usize| {
        Tensor::<B, 5>::random([1, c, 20, 64 / s, 64 / s], Distribution::Default, &device)
            .require_grad()
    };
    let levels = [
        mk(ch[0], 2),
        mk(ch[1], 4),
        mk(ch[2], 8),
        mk(ch[3], 16),
        mk(ch[4], 32),
    ];
    let p1 = DecoderPart1::<B>::new(ch, &cfg, &device);
    let t = Instant::now();
    let out1 = p1.forward(levels.clone());
    println!("part1 forward: {:?} -> {:?}", t.elapsed(), out1.dims());
    let t = Instant::now();
    out1.clone().sum().backward();
    println!("part1 backward: {:?}", t.elapsed());

    // Part 2 on part1-shaped input.
    let p2 = DecoderPart2::<B>::new(&cfg, &device);
    let x2 = Tensor::<B, 5>::random(out1.dims(), Distribution::Default, &device).require_grad();
    let t = Instant::now();
    let out2 = p2.forward(x2.clone());
    println!("part2 forward: {:?} -> {:?}", t.elapsed(), out2.dims());
    let t = Instant::now();
    out2.sum().backward();
    println!("part2 backward: {:?}", t.elapsed());
}
