//! Timing probe for the overfit smoke test: prints per-epoch dice and
//! wall-clock costs so budgets can be set realistically.

use std::time::Instant;

use smolder::train::{mean_dice, train_model, ClipStore};
use smolder_core::config::RunConfig;
use smolder_core::dataset::{build_clips, ClipSource};
use smolder_core::ir::LabelingConfig;
use smolder_core::synth::{generate_synthetic_scene, SynthSceneConfig};

fn main() {
    let overrides: Vec<String> = std::env::args().skip(1).collect();
    let mut base = vec![
        "model.backbone=mobilenet".to_string(),
        "model.decoder_width_cap=8".to_string(),
        "encoder.freeze=true".to_string(),
        "train.batch_size=1".to_string(),
        "train.epochs=8".to_string(),
        "train.max_steps=64".to_string(),
        "train.target_dice=0.85".to_string(),
        "train.lr_init=0.003".to_string(),
        "train.seed=8".to_string(),
    ];
    base.extend(overrides);
    let cfg = RunConfig::load(None, &base).unwrap();

    let mut clips = Vec::new();
    for s in 0..8 {
        let scene = SynthSceneConfig {
            n_frames: 20,
            seed: 100 + s,
            ..Default::default()
        };
        let (rgb, ir) = generate_synthetic_scene(&scene).unwrap();
        let pairs: Vec<_> = rgb.into_iter().zip(ir).collect();
        clips.extend(
            build_clips(
                &pairs,
                20,
                &LabelingConfig::default(),
                &format!("s{s}"),
                ClipSource::Synthetic,
            )
            .unwrap(),
        );
    }
    let store = ClipStore::from_clips(&clips);
    let dir = tempfile::tempdir().unwrap();

    let t0 = Instant::now();
    let outcome = train_model(&store, None, &cfg, dir.path()).unwrap();
    let elapsed = t0.elapsed();
    for r in &outcome.history {
        println!(
            "epoch {:3} {:5} dice {:.4} loss {:?} lr {}",
            r.epoch, r.split, r.dice, r.loss, r.lr
        );
    }
    println!(
        "total {:?} for {} steps; best dice {:.4}",
        elapsed, outcome.state.global_step, outcome.state.best_test_dice
    );

    let te = Instant::now();
    let (model, _) = smolder::train::load_checkpoint(&outcome.ckpt_best).unwrap();
    let d = mean_dice(&model, &store, 20, 0.5).unwrap();
    println!("eval of 8 clips took {:?} (dice {:.4})", te.elapsed(), d);
}
