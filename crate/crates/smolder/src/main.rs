//! Command-line pipeline: IR labeling, synthetic scenes, dataset
//! construction, training, inference, and evaluation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ndarray::Array3;
use serde::Serialize;
use sha2::{Digest, Sha256};

use smolder::error::Result;
use smolder::eval::{format_report, read_metrics, write_metrics};
use smolder::infer::sliding_window_infer;
use smolder::model::{ModelMeta, Segmenter};
use smolder::train::{load_checkpoint_expecting, train_model, ClipStore};
use smolder::Cpu;
use smolder_core::config::RunConfig;
use smolder_core::dataset::{
    build_clips, conform_rgb, ingest_video, split_dataset, ClipSource, DatasetManifest,
    ManifestEntry, Split,
};
use smolder_core::io::{
    load_ir_frame, load_mask_png, load_rgb_frame, save_mask_png, save_overlay_png, save_prob_png,
    save_rgb_frame,
};
use smolder_core::ir::label_ir_frame;
use smolder_core::metrics::MetricsReport;
use smolder_core::synth::generate_synthetic_scene;

#[derive(Parser)]
#[command(
    name = "smolder",
    version,
    about = "Obscured-fire segmentation pipeline"
)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config value, e.g. --set model.attention=cbam.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Label a directory of IR heat-map PNGs as binary fire masks.
    LabelIr {
        /// Directory of IR PNGs, processed in filename order.
        #[arg(long)]
        ir_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate synthetic smoke-over-fire scenes (RGB + IR frame pairs).
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Cut paired RGB/IR streams into clips with fused ground truth and
    /// split them into train/test.
    BuildDataset {
        /// Scene directory containing rgb/ and ir/ subdirectories, or a
        /// directory of such scene directories.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train on a built dataset; artifacts go to the runs directory.
    Train {
        /// Path to a dataset manifest written by build-dataset.
        #[arg(long)]
        manifest: PathBuf,
        /// Run name; directories are created under $SMOLDER_RUNS_DIR or ./runs.
        #[arg(long)]
        run_id: String,
    },
    /// Sliding-window inference over a directory of RGB frames.
    Infer {
        /// Checkpoint prefix (the path without .mpk/.json extension).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        frames_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score a checkpoint on one split of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Split to evaluate: train or test.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Re-read a metrics file, recompute aggregates, and print the table.
    Report {
        #[arg(long)]
        metrics: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::LabelIr { ir_dir, out_dir } => cmd_label_ir(&cfg, &ir_dir, &out_dir),
        Command::Synth { out_dir } => cmd_synth(&cfg, &out_dir),
        Command::BuildDataset { input, out_dir } => cmd_build_dataset(&cfg, &input, &out_dir),
        Command::Train { manifest, run_id } => cmd_train(&cfg, &manifest, &run_id),
        Command::Infer {
            checkpoint,
            frames_dir,
            out_dir,
        } => cmd_infer(&cfg, &checkpoint, &frames_dir, &out_dir),
        Command::Eval {
            checkpoint,
            manifest,
            split,
            out_dir,
        } => cmd_eval(&cfg, &checkpoint, &manifest, &split, &out_dir),
        Command::Report { metrics } => {
            let report = read_metrics(&metrics)?;
            print!("{}", format_report(&report));
            Ok(())
        }
    }
}

fn runs_dir() -> PathBuf {
    std::env::var_os("SMOLDER_RUNS_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| smolder_core::Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn sorted_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| smolder_core::Error::io(dir.display().to_string(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    paths.sort();
    Ok(paths)
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).map_err(|e| smolder_core::Error::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Serialize)]
struct RunManifest {
    run_id: String,
    config_hash: String,
    seed: u64,
    crate_version: &'static str,
    input_hashes: std::collections::BTreeMap<String, String>,
}

fn write_run_manifest(run_dir: &Path, manifest: &RunManifest, cfg: &RunConfig) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| smolder::Error::Train(format!("cannot encode run manifest: {e}")))?;
    let path = run_dir.join("run.json");
    std::fs::write(&path, json)
        .map_err(|e| smolder_core::Error::io(path.display().to_string(), e))?;
    let cfg_path = run_dir.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml())
        .map_err(|e| smolder_core::Error::io(cfg_path.display().to_string(), e))?;
    Ok(())
}

fn cmd_label_ir(cfg: &RunConfig, ir_dir: &Path, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    let paths = sorted_pngs(ir_dir)?;
    if paths.is_empty() {
        return Err(smolder_core::Error::input(format!(
            "no PNG frames found in {}",
            ir_dir.display()
        ))
        .into());
    }
    for (idx, path) in paths.iter().enumerate() {
        let frame = load_ir_frame(path, idx)?;
        let mask = label_ir_frame(&frame, &cfg.labeling)?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("frame");
        save_mask_png(&mask, &out_dir.join(format!("{name}_mask.png")))?;
    }
    println!("labeled {} frames into {}", paths.len(), out_dir.display());
    Ok(())
}

fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    for s in 0..cfg.synth.n_scenes {
        let mut scene_cfg = cfg.synth.scene.clone();
        scene_cfg.seed = scene_cfg.seed.wrapping_add(s as u64);
        let (rgb, ir) = generate_synthetic_scene(&scene_cfg)?;
        let scene_dir = out_dir.join(format!("scene_{s:03}"));
        let rgb_dir = scene_dir.join("rgb");
        let ir_dir = scene_dir.join("ir");
        create_dir(&rgb_dir)?;
        create_dir(&ir_dir)?;
        for (i, frame) in rgb.iter().enumerate() {
            save_rgb_frame(frame, &rgb_dir.join(format!("{i:05}.png")))?;
        }
        for frame in &ir {
            // IR intensities are already in [0,1]; an 8-bit gray PNG keeps
            // the heat map loadable by load_ir_frame.
            save_prob_png(
                frame.pixels(),
                &ir_dir.join(format!("{:05}.png", frame.frame_index)),
            )?;
        }
    }
    println!(
        "wrote {} scene(s) of {} frames to {}",
        cfg.synth.n_scenes,
        cfg.synth.scene.n_frames,
        out_dir.display()
    );
    Ok(())
}

/// A scene directory holds rgb/ and ir/; `input` may be one scene or a
/// directory of scenes.
fn scene_dirs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.join("rgb").is_dir() && input.join("ir").is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| smolder_core::Error::io(input.display().to_string(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("rgb").is_dir() && p.join("ir").is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(smolder_core::Error::input(format!(
            "{} contains no scene directories (rgb/ + ir/)",
            input.display()
        ))
        .into());
    }
    Ok(dirs)
}

fn cmd_build_dataset(cfg: &RunConfig, input: &Path, out_dir: &Path) -> Result<()> {
    let clips_dir = out_dir.join("clips");
    create_dir(&clips_dir)?;
    let mut entries: Vec<ManifestEntry> = Vec::new();
    for scene in scene_dirs(input)? {
        let scene_name = scene
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or("scene")
            .to_string();
        let pairs = ingest_video(
            &scene.join("rgb"),
            &scene.join("ir"),
            cfg.dataset.resolution_policy,
        )?;
        let clips = build_clips(
            &pairs,
            cfg.dataset.seq_len,
            &cfg.labeling,
            &scene_name,
            ClipSource::Real,
        )?;
        for clip in &clips {
            let clip_dir = clips_dir.join(&clip.clip_id);
            create_dir(&clip_dir)?;
            let mut frame_paths = Vec::with_capacity(clip.frames.len());
            for (i, frame) in clip.frames.iter().enumerate() {
                let p = clip_dir.join(format!("f{i:03}.png"));
                save_rgb_frame(frame, &p)?;
                frame_paths.push(p);
            }
            let gt_path = clip_dir.join("gt.png");
            save_mask_png(&clip.gt_mask, &gt_path)?;
            entries.push(ManifestEntry {
                clip_id: clip.clip_id.clone(),
                split: Split::Train,
                gt_path,
                frame_paths,
            });
        }
    }
    let manifest = split_dataset(&entries, cfg.dataset.test_fraction, cfg.dataset.seed)?;
    let manifest_path = out_dir.join("manifest.txt");
    manifest.write(&manifest_path)?;
    let (n_train, n_test) = manifest.counts();
    println!(
        "built {} clips ({n_train} train / {n_test} test); manifest at {}",
        manifest.clips.len(),
        manifest_path.display()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, manifest_path: &Path, run_id: &str) -> Result<()> {
    let manifest = DatasetManifest::read(manifest_path)?;
    manifest.check_disjoint()?;
    if manifest.seq_len != cfg.dataset.seq_len {
        return Err(smolder_core::Error::config(format!(
            "manifest seq_len {} does not match dataset.seq_len {}",
            manifest.seq_len, cfg.dataset.seq_len
        ))
        .into());
    }
    let run_dir = runs_dir().join(run_id);
    create_dir(&run_dir)?;
    let mut input_hashes = std::collections::BTreeMap::new();
    input_hashes.insert(
        manifest_path.display().to_string(),
        file_hash(manifest_path)?,
    );
    write_run_manifest(
        &run_dir,
        &RunManifest {
            run_id: run_id.to_string(),
            config_hash: cfg.hash(),
            seed: cfg.train.seed,
            crate_version: env!("CARGO_PKG_VERSION"),
            input_hashes,
        },
        cfg,
    )?;

    let train_store = ClipStore::from_manifest_split(&manifest, Split::Train)?;
    let test_store = ClipStore::from_manifest_split(&manifest, Split::Test)?;
    println!(
        "training on {} clips, testing on {} ({} backbone, {} attention)",
        train_store.len(),
        test_store.len(),
        cfg.model.backbone.name(),
        cfg.model.attention.name()
    );
    let outcome = train_model(&train_store, Some(&test_store), cfg, &run_dir)?;
    println!(
        "finished after {} steps; best test dice {:.4}; checkpoints at {} / {}",
        outcome.state.global_step,
        outcome.state.best_test_dice,
        outcome.ckpt_best.display(),
        outcome.ckpt_last.display()
    );
    Ok(())
}

fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<Segmenter<Cpu>> {
    let expected = ModelMeta::from_run_config(cfg)?;
    let (model, _) = load_checkpoint_expecting(checkpoint, &expected)?;
    Ok(model)
}

fn cmd_infer(cfg: &RunConfig, checkpoint: &Path, frames_dir: &Path, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    let model = load_model(cfg, checkpoint)?;
    let frames: Vec<Array3<f32>> = sorted_pngs(frames_dir)?
        .iter()
        .map(|p| load_rgb_frame(p).and_then(|f| conform_rgb(&f, cfg.dataset.resolution_policy)))
        .collect::<smolder_core::Result<_>>()?;
    let preds = sliding_window_infer(&model, &frames, cfg.dataset.seq_len, cfg.infer.stride)?;
    if preds.is_empty() {
        println!(
            "video has {} frames, fewer than one {}-frame window; nothing to predict",
            frames.len(),
            cfg.dataset.seq_len
        );
        return Ok(());
    }
    for pred in &preds {
        let stem = format!("frame_{:05}", pred.frame_index);
        save_prob_png(&pred.map.probs, &out_dir.join(format!("{stem}_prob.png")))?;
        let mask = pred.map.binarize(cfg.infer.binarize_threshold);
        save_mask_png(&mask, &out_dir.join(format!("{stem}_mask.png")))?;
        if cfg.infer.overlay {
            save_overlay_png(
                &frames[pred.frame_index],
                &mask,
                None,
                &out_dir.join(format!("{stem}_overlay.png")),
            )?;
        }
    }
    println!(
        "wrote {} window predictions (stride {}) to {}",
        preds.len(),
        cfg.infer.stride,
        out_dir.display()
    );
    Ok(())
}

fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    manifest_path: &Path,
    split: &str,
    out_dir: &Path,
) -> Result<()> {
    let split = match split {
        "train" => Split::Train,
        "test" => Split::Test,
        other => {
            return Err(smolder_core::Error::input(format!(
                "unknown split '{other}', expected train or test"
            ))
            .into())
        }
    };
    create_dir(out_dir)?;
    let model = load_model(cfg, checkpoint)?;
    let manifest = DatasetManifest::read(manifest_path)?;
    let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    if entries.is_empty() {
        return Err(smolder_core::Error::input(format!("the {split} split is empty")).into());
    }
    let mut per_clip = Vec::with_capacity(entries.len());
    for entry in entries {
        let frames: Vec<Array3<f32>> = entry
            .frame_paths
            .iter()
            .map(|p| load_rgb_frame(p))
            .collect::<smolder_core::Result<_>>()?;
        let gt = load_mask_png(&entry.gt_path)?;
        let map = smolder::infer::predict_clip(&model, &frames, manifest.seq_len)?;
        let pred = map.binarize(cfg.eval.binarize_threshold);
        if cfg.eval.overlay {
            save_overlay_png(
                frames.last().expect("clip has frames"),
                &pred,
                Some(&gt),
                &out_dir.join(format!("{}_overlay.png", entry.clip_id)),
            )?;
        }
        per_clip.push(MetricsReport::score_pair(&entry.clip_id, &pred, &gt)?);
    }
    let report = MetricsReport::from_clips(per_clip)?;
    let metrics_path = out_dir.join("metrics.csv");
    write_metrics(&report, &metrics_path)?;
    print!("{}", format_report(&report));
    println!("metrics written to {}", metrics_path.display());
    Ok(())
}
