//! Run configuration: a TOML file with `--set section.key=value` overrides,
//! strict about unknown keys, validated before any stage runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::ResolutionPolicy;
use crate::error::{Error, Result};
use crate::ir::LabelingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneFamily {
    Vgg16,
    Resnet18,
    EfficientnetB0,
    EfficientnetB1,
    Mobilenet,
}

impl BackboneFamily {
    pub const ALL: [BackboneFamily; 5] = [
        BackboneFamily::Vgg16,
        BackboneFamily::Resnet18,
        BackboneFamily::EfficientnetB0,
        BackboneFamily::EfficientnetB1,
        BackboneFamily::Mobilenet,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BackboneFamily::Vgg16 => "vgg16",
            BackboneFamily::Resnet18 => "resnet18",
            BackboneFamily::EfficientnetB0 => "efficientnet_b0",
            BackboneFamily::EfficientnetB1 => "efficientnet_b1",
            BackboneFamily::Mobilenet => "mobilenet",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    Scse,
    Cbam,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 2] = [AttentionKind::Scse, AttentionKind::Cbam];

    pub fn name(&self) -> &'static str {
        match self {
            AttentionKind::Scse => "scse",
            AttentionKind::Cbam => "cbam",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub seq_len: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub resolution_policy: ResolutionPolicy,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seq_len: 20,
            test_fraction: 0.3,
            seed: 0,
            resolution_policy: ResolutionPolicy::Crop,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: BackboneFamily,
    pub attention: AttentionKind,
    pub pretrained: bool,
    /// Weight file consulted when `pretrained` is set.
    pub weights_path: Option<PathBuf>,
    pub n_classes: usize,
    pub time_kernel: usize,
    pub n_time_blocks: usize,
    /// Cap on decoder stage widths; the schedule halves from the bottleneck.
    pub decoder_width_cap: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneFamily::Vgg16,
            attention: AttentionKind::Scse,
            pretrained: false,
            weights_path: None,
            n_classes: 1,
            time_kernel: 4,
            n_time_blocks: 6,
            decoder_width_cap: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct EncoderConfig {
    pub freeze: bool,
}


#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr_init: f64,
    pub optimizer: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_step_size: usize,
    pub lr_gamma: f64,
    pub epsilon_dice: f64,
    pub seed: u64,
    /// Optional hard cap on optimizer steps, for smoke tests.
    pub max_steps: Option<usize>,
    /// Optional early stop: end training once the tracked dice reaches this.
    pub target_dice: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            lr_init: 1e-2,
            optimizer: "adam".to_string(),
            epochs: 300,
            batch_size: 5,
            lr_step_size: 100,
            lr_gamma: 0.1,
            epsilon_dice: 1e-6,
            seed: 0,
            max_steps: None,
            target_dice: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct InferSection {
    pub stride: usize,
    pub binarize_threshold: f64,
    pub overlay: bool,
}

impl Default for InferSection {
    fn default() -> Self {
        Self {
            stride: 1,
            binarize_threshold: 0.5,
            overlay: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub binarize_threshold: f64,
    pub overlay: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            binarize_threshold: 0.5,
            overlay: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_scenes: usize,
    pub scene: crate::synth::SynthSceneConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            n_scenes: 1,
            scene: Default::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub labeling: LabelingConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub encoder: EncoderConfig,
    pub train: TrainSection,
    pub infer: InferSection,
    pub eval: EvalSection,
    pub synth: SynthSection,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.labeling.validate()?;
        if self.dataset.seq_len == 0 {
            return Err(Error::config("dataset.seq_len must be >= 1"));
        }
        if !(self.dataset.test_fraction > 0.0 && self.dataset.test_fraction < 1.0) {
            return Err(Error::config(format!(
                "dataset.test_fraction must be in (0,1), got {}",
                self.dataset.test_fraction
            )));
        }
        if self.train.lr_init <= 0.0 {
            return Err(Error::config("train.lr_init must be > 0"));
        }
        if self.train.epochs == 0 {
            return Err(Error::config("train.epochs must be >= 1"));
        }
        if self.train.batch_size == 0 {
            return Err(Error::config("train.batch_size must be >= 1"));
        }
        if !(self.train.lr_gamma > 0.0 && self.train.lr_gamma <= 1.0) {
            return Err(Error::config(format!(
                "train.lr_gamma must be in (0,1], got {}",
                self.train.lr_gamma
            )));
        }
        if self.train.optimizer != "adam" {
            return Err(Error::config(format!(
                "train.optimizer must be 'adam', got '{}'",
                self.train.optimizer
            )));
        }
        if self.infer.stride == 0 {
            return Err(Error::config("infer.stride must be >= 1"));
        }
        if self.model.n_classes == 0 {
            return Err(Error::config("model.n_classes must be >= 1"));
        }
        if self.model.pretrained && self.model.weights_path.is_none() {
            return Err(Error::config(
                "model.pretrained requires model.weights_path",
            ));
        }
        // Part-2 arithmetic must land on T = 2 before the final 2x1x1 conv.
        let shrink = self.model.n_time_blocks * (self.model.time_kernel - 1);
        if self.dataset.seq_len < shrink + 2 || self.dataset.seq_len - shrink != 2 {
            return Err(Error::config(format!(
                "dataset.seq_len {} with {} time blocks of kernel {} must satisfy seq_len - blocks*(kernel-1) = 2",
                self.dataset.seq_len, self.model.n_time_blocks, self.model.time_kernel
            )));
        }
        if self.synth.scene.n_frames < self.dataset.seq_len {
            return Err(Error::config(
                "synth.scene.n_frames must be >= dataset.seq_len",
            ));
        }
        Ok(())
    }

    /// Parse a TOML file, then apply `section.key=value` overrides. Unknown
    /// keys, type mismatches, and invariant violations are rejected with the
    /// offending key named.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => {
                std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?
            }
            None => String::new(),
        };
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| Error::config(format!("config parse error: {e}")))?;
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e| Error::config(format!("config error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// sha256 over the fully resolved configuration.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml().as_bytes());
        hex::encode(hasher.finalize())
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override '{spec}' must be key=value")))?;
    let parsed: toml::Table = format!("x = {value}")
        .parse()
        .or_else(|_| format!("x = \"{value}\"").parse::<toml::Table>())
        .map_err(|e| Error::config(format!("cannot parse override value '{value}': {e}")))?;
    let value = parsed["x"].clone();
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut current = table;
    for part in &parts[..parts.len() - 1] {
        current = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override key '{key}' crosses a non-table")))?;
    }
    current.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn empty_file_gives_documented_defaults() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"").unwrap();
        let cfg = RunConfig::load(Some(f.path()), &[]).unwrap();
        assert_eq!(cfg.dataset.seq_len, 20);
        assert_eq!(cfg.train.lr_init, 1e-2);
        assert_eq!(cfg.train.batch_size, 5);
        assert_eq!(cfg.train.epochs, 300);
        assert_eq!(cfg.labeling.min_blob_area, 200);
    }

    #[test]
    fn override_beats_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"[model]\nattention = \"scse\"\n").unwrap();
        let cfg = RunConfig::load(Some(f.path()), &["model.attention=cbam".to_string()]).unwrap();
        assert_eq!(cfg.model.attention, AttentionKind::Cbam);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"[train]\nbatchsize = 4\n").unwrap();
        let err = RunConfig::load(Some(f.path()), &[]).unwrap_err();
        assert!(err.to_string().contains("batchsize"), "{err}");
    }

    #[test]
    fn invariant_violations_named() {
        let err = RunConfig::load(None, &["train.batch_size=0".to_string()]).unwrap_err();
        assert!(err.to_string().contains("train.batch_size"), "{err}");
        let err = RunConfig::load(None, &["dataset.seq_len=19".to_string()]).unwrap_err();
        assert!(err.to_string().contains("seq_len"), "{err}");
    }

    #[test]
    fn type_mismatch_rejected() {
        let err = RunConfig::load(None, &["train.epochs=fast".to_string()]).unwrap_err();
        assert!(err.to_string().contains("epochs"), "{err}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::load(None, &[]).unwrap();
        let b = RunConfig::load(None, &["train.seed=9".to_string()]).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), RunConfig::load(None, &[]).unwrap().hash());
    }

    #[test]
    fn seq_len_arithmetic_accepts_matching_kernel() {
        // 14 - 6*(3-1) = 2 works with a time kernel of 3.
        let cfg = RunConfig::load(
            None,
            &[
                "dataset.seq_len=14".to_string(),
                "model.time_kernel=3".to_string(),
                "synth.scene.n_frames=14".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.model.time_kernel, 3);
    }
}
