//! Dice-loss training with Adam and a step learning-rate schedule, plus
//! checkpoint save/load.

use std::path::{Path, PathBuf};

use burn::module::{AutodiffModule, Module};
use burn::optim::{AdamConfig, GradientsParams, Optimizer};
use burn::record::{FullPrecisionSettings, NamedMpkFileRecorder};
use burn::tensor::activation::sigmoid;
use burn::tensor::backend::Backend;
use burn::tensor::{ElementConversion, Tensor, TensorData};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use smolder_core::config::RunConfig;
use smolder_core::dataset::{Clip, DatasetManifest, ManifestEntry, Split};
use smolder_core::io::{load_mask_png, load_rgb_frame};
use smolder_core::ir::LabelingConfig;
use smolder_core::mask::BinaryMask;
use smolder_core::metrics::dice_score;

use crate::data::{clip_to_data, mask_to_data, tensor_to_array2};
use crate::error::{Error, Result};
use crate::model::{ModelMeta, Segmenter};
use crate::{Cpu, CpuAutodiff};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// 1 - (2 Σ p·g + ε) / (Σ p² + Σ g² + ε), averaged over the batch.
/// `probs` must already be post-sigmoid.
pub fn dice_loss<B: Backend>(
    probs: Tensor<B, 3>,
    gt: Tensor<B, 3>,
    epsilon: f64,
) -> Result<Tensor<B, 1>> {
    if probs.dims() != gt.dims() {
        return Err(Error::Shape(format!(
            "dice_loss shape mismatch: {:?} vs {:?}",
            probs.dims(),
            gt.dims()
        )));
    }
    let [n, h, w] = probs.dims();
    let p = probs.reshape([n, h * w]);
    let g = gt.reshape([n, h * w]);
    let inter = (p.clone() * g.clone()).sum_dim(1);
    let denom = p.clone().powf_scalar(2.0).sum_dim(1) + g.powf_scalar(2.0).sum_dim(1);
    let per_sample = -(inter * 2.0 + epsilon) / (denom + epsilon) + 1.0;
    Ok(per_sample.mean())
}

/// lr_init · gamma^floor(epoch / step_size).
pub fn lr_at(epoch: usize, lr_init: f64, step_size: usize, gamma: f64) -> f64 {
    lr_init * gamma.powi((epoch / step_size.max(1)) as i32)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub global_step: usize,
    pub best_test_dice: f64,
    pub lr_current: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub dice: f64,
    pub loss: Option<f64>,
    pub lr: f64,
}

/// In-memory clip store: tensor payloads plus the masks used for scoring.
pub struct ClipStore {
    pub ids: Vec<String>,
    inputs: Vec<TensorData>,
    gts: Vec<TensorData>,
    pub masks: Vec<BinaryMask>,
}

impl ClipStore {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn from_clips(clips: &[Clip]) -> Self {
        let mut store = Self {
            ids: Vec::new(),
            inputs: Vec::new(),
            gts: Vec::new(),
            masks: Vec::new(),
        };
        for clip in clips {
            store.ids.push(clip.clip_id.clone());
            store.inputs.push(clip_to_data(&clip.frames));
            store.gts.push(mask_to_data(&clip.gt_mask));
            store.masks.push(clip.gt_mask.clone());
        }
        store
    }

    pub fn from_manifest_split(manifest: &DatasetManifest, split: Split) -> Result<Self> {
        let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
        let mut store = Self {
            ids: Vec::new(),
            inputs: Vec::new(),
            gts: Vec::new(),
            masks: Vec::new(),
        };
        for entry in entries {
            let frames = entry
                .frame_paths
                .iter()
                .map(|p| load_rgb_frame(p))
                .collect::<smolder_core::Result<Vec<_>>>()?;
            let mask = load_mask_png(&entry.gt_path)?;
            store.ids.push(entry.clip_id.clone());
            store.inputs.push(clip_to_data(&frames));
            store.gts.push(mask_to_data(&mask));
            store.masks.push(mask);
        }
        Ok(store)
    }

    pub fn input<B: Backend>(&self, idx: usize, device: &B::Device) -> Tensor<B, 5> {
        Tensor::from_data(self.inputs[idx].clone(), device)
    }

    pub fn gt<B: Backend>(&self, idx: usize, device: &B::Device) -> Tensor<B, 3> {
        Tensor::from_data(self.gts[idx].clone(), device)
    }

    fn batch<B: Backend>(
        &self,
        indices: &[usize],
        device: &B::Device,
    ) -> (Tensor<B, 5>, Tensor<B, 3>) {
        let inputs: Vec<Tensor<B, 5>> = indices.iter().map(|&i| self.input(i, device)).collect();
        let gts: Vec<Tensor<B, 3>> = indices.iter().map(|&i| self.gt(i, device)).collect();
        (Tensor::cat(inputs, 0), Tensor::cat(gts, 0))
    }
}

/// Mean binarized Dice of an inference-mode model over a clip store.
pub fn mean_dice(
    model: &Segmenter<Cpu>,
    store: &ClipStore,
    seq_len: usize,
    threshold: f64,
) -> Result<f64> {
    let device = Default::default();
    let mut total = 0.0;
    for idx in 0..store.len() {
        let logits = model.forward(store.input(idx, &device), seq_len)?;
        let [_, classes, h, w] = logits.dims();
        debug_assert_eq!(classes, 1);
        let probs = tensor_to_array2(sigmoid(logits).reshape([h, w]));
        let pred = BinaryMask::from_fn(h, w, |r, c| probs[[r, c]] as f64 >= threshold);
        total += dice_score(&pred, &store.masks[idx]).map_err(Error::Core)?;
    }
    Ok(total / store.len().max(1) as f64)
}

pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub state: TrainState,
    pub ckpt_best: PathBuf,
    pub ckpt_last: PathBuf,
}

/// Train on `train_store`, tracking binarized Dice on `test_store` when
/// present (else on the train split). Checkpoints the best-scoring and the
/// final model under `run_dir`, and appends the epoch history to
/// `run_dir/history.csv`.
pub fn train_model(
    train_store: &ClipStore,
    test_store: Option<&ClipStore>,
    cfg: &RunConfig,
    run_dir: &Path,
) -> Result<TrainOutcome> {
    if train_store.is_empty() {
        return Err(Error::Train("train split is empty".to_string()));
    }
    let device = Default::default();
    CpuAutodiff::seed(&device, cfg.train.seed);

    let meta = ModelMeta::from_run_config(cfg)?;
    let mut model = Segmenter::<CpuAutodiff>::new(&meta, &device);
    if cfg.model.pretrained {
        let path =
            cfg.model.weights_path.as_ref().ok_or_else(|| {
                Error::Checkpoint("model.pretrained set without weights_path".into())
            })?;
        let recorder = NamedMpkFileRecorder::<FullPrecisionSettings>::new();
        model = model
            .load_file(path.clone(), &recorder, &device)
            .map_err(|e| Error::Checkpoint(format!("cannot load pretrained weights: {e}")))?;
    }
    let mut optim = AdamConfig::new().init();
    let seq_len = cfg.dataset.seq_len;
    let threshold = cfg.eval.binarize_threshold;
    let labeling_hash = hash_labeling(&cfg.labeling);

    let mut history = Vec::new();
    let mut state = TrainState {
        epoch: 0,
        global_step: 0,
        best_test_dice: f64::NEG_INFINITY,
        lr_current: lr_at(
            0,
            cfg.train.lr_init,
            cfg.train.lr_step_size,
            cfg.train.lr_gamma,
        ),
        seed: cfg.train.seed,
    };

    let eval_store = test_store.filter(|s| !s.is_empty()).unwrap_or(train_store);
    let eval_split = if test_store.is_some_and(|s| !s.is_empty()) {
        "test"
    } else {
        "train"
    };

    let ckpt_best = run_dir.join("ckpt_best");
    let ckpt_last = run_dir.join("ckpt_last");
    std::fs::create_dir_all(run_dir)
        .map_err(|e| smolder_core::Error::io(run_dir.display().to_string(), e))?;

    // Epoch-0 evaluation of the initialized model.
    let init_dice = mean_dice(&model.valid(), eval_store, seq_len, threshold)?;
    history.push(EpochRecord {
        epoch: 0,
        split: eval_split.to_string(),
        dice: init_dice,
        loss: None,
        lr: state.lr_current,
    });
    state.best_test_dice = init_dice;
    save_checkpoint(
        &model.valid(),
        &checkpoint_meta(&meta, &state, cfg, &labeling_hash),
        &ckpt_best,
    )?;

    let max_steps = cfg.train.max_steps.unwrap_or(usize::MAX);
    let mut indices: Vec<usize> = (0..train_store.len()).collect();

    'training: for epoch in 0..cfg.train.epochs {
        state.epoch = epoch;
        state.lr_current = lr_at(
            epoch,
            cfg.train.lr_init,
            cfg.train.lr_step_size,
            cfg.train.lr_gamma,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed.wrapping_add(epoch as u64));
        indices.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for batch_idx in indices.chunks(cfg.train.batch_size) {
            if state.global_step >= max_steps {
                break 'training;
            }
            let (input, gt) = train_store.batch::<CpuAutodiff>(batch_idx, &device);
            let logits = model
                .forward_frozen_traced(input, seq_len, cfg.encoder.freeze)?
                .0;
            let [n, _, h, w] = logits.dims();
            let probs = sigmoid(logits).reshape([n, h, w]);
            let loss = dice_loss(probs, gt, cfg.train.epsilon_dice)?;
            let loss_value: f64 = loss.clone().into_scalar().elem();
            if !loss_value.is_finite() {
                return Err(Error::Train(format!(
                    "non-finite loss {loss_value} at step {} (epoch {epoch})",
                    state.global_step
                )));
            }
            let grads = GradientsParams::from_grads(loss.backward(), &model);
            model = optim.step(state.lr_current, model, grads);
            state.global_step += 1;
            epoch_loss += loss_value;
            n_batches += 1;
        }
        if n_batches == 0 {
            break;
        }

        let valid_model = model.valid();
        let train_dice = mean_dice(&valid_model, train_store, seq_len, threshold)?;
        history.push(EpochRecord {
            epoch: epoch + 1,
            split: "train".to_string(),
            dice: train_dice,
            loss: Some(epoch_loss / n_batches as f64),
            lr: state.lr_current,
        });
        let eval_dice = if std::ptr::eq(eval_store, train_store) {
            train_dice
        } else {
            let d = mean_dice(&valid_model, eval_store, seq_len, threshold)?;
            history.push(EpochRecord {
                epoch: epoch + 1,
                split: eval_split.to_string(),
                dice: d,
                loss: None,
                lr: state.lr_current,
            });
            d
        };
        if eval_dice > state.best_test_dice {
            state.best_test_dice = eval_dice;
            save_checkpoint(
                &valid_model,
                &checkpoint_meta(&meta, &state, cfg, &labeling_hash),
                &ckpt_best,
            )?;
        }
        if cfg.train.target_dice.is_some_and(|t| eval_dice >= t) {
            break;
        }
    }

    save_checkpoint(
        &model.valid(),
        &checkpoint_meta(&meta, &state, cfg, &labeling_hash),
        &ckpt_last,
    )?;
    write_history(&history, &run_dir.join("history.csv"))?;

    Ok(TrainOutcome {
        history,
        state,
        ckpt_best,
        ckpt_last,
    })
}

fn hash_labeling(labeling: &LabelingConfig) -> String {
    let json = serde_json::to_string(labeling).expect("labeling config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    hex::encode(hasher.finalize())
}

fn checkpoint_meta(
    meta: &ModelMeta,
    state: &TrainState,
    cfg: &RunConfig,
    labeling_hash: &str,
) -> CheckpointMeta {
    CheckpointMeta {
        format_version: CHECKPOINT_FORMAT_VERSION,
        model: meta.clone(),
        state: state.clone(),
        config_hash: cfg.hash(),
        labeling_hash: labeling_hash.to_string(),
    }
}

pub fn write_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,split,dice,loss,lr\n");
    for r in history {
        let loss = r.loss.map(|l| l.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.split, r.dice, loss, r.lr
        ));
    }
    std::fs::write(path, out)
        .map_err(|e| smolder_core::Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Weights plus the metadata needed to rebuild and sanity-check the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub model: ModelMeta,
    pub state: TrainState,
    pub config_hash: String,
    pub labeling_hash: String,
}

pub fn save_checkpoint(model: &Segmenter<Cpu>, meta: &CheckpointMeta, prefix: &Path) -> Result<()> {
    let recorder = NamedMpkFileRecorder::<FullPrecisionSettings>::new();
    model
        .clone()
        .save_file(prefix.to_path_buf(), &recorder)
        .map_err(|e| Error::Checkpoint(format!("cannot save weights: {e}")))?;
    let meta_path = prefix.with_extension("json");
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::Checkpoint(format!("cannot encode metadata: {e}")))?;
    std::fs::write(&meta_path, json)
        .map_err(|e| smolder_core::Error::io(meta_path.display().to_string(), e))?;
    Ok(())
}

pub fn load_checkpoint(prefix: &Path) -> Result<(Segmenter<Cpu>, CheckpointMeta)> {
    let meta_path = prefix.with_extension("json");
    let json = std::fs::read_to_string(&meta_path)
        .map_err(|e| smolder_core::Error::io(meta_path.display().to_string(), e))?;
    let meta: CheckpointMeta = serde_json::from_str(&json)
        .map_err(|e| Error::Checkpoint(format!("cannot decode metadata: {e}")))?;
    if meta.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint format version {} does not match supported version {}",
            meta.format_version, CHECKPOINT_FORMAT_VERSION
        )));
    }
    let device = Default::default();
    let recorder = NamedMpkFileRecorder::<FullPrecisionSettings>::new();
    let model = Segmenter::<Cpu>::new(&meta.model, &device)
        .load_file(prefix.to_path_buf(), &recorder, &device)
        .map_err(|e| Error::Checkpoint(format!("cannot load weights: {e}")))?;
    Ok((model, meta))
}

/// Load a checkpoint and require its architecture to match `expected`.
pub fn load_checkpoint_expecting(
    prefix: &Path,
    expected: &ModelMeta,
) -> Result<(Segmenter<Cpu>, CheckpointMeta)> {
    let (model, meta) = load_checkpoint(prefix)?;
    if meta.model.backbone.family != expected.backbone.family {
        return Err(Error::Checkpoint(format!(
            "checkpoint backbone {} does not match configured {}",
            meta.model.backbone.family.name(),
            expected.backbone.family.name()
        )));
    }
    if meta.model != *expected {
        return Err(Error::Checkpoint(
            "checkpoint architecture does not match configuration".to_string(),
        ));
    }
    Ok((model, meta))
}
