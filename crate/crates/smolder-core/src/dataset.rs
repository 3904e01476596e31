//! Clip construction: pair RGB and IR frame streams, cut them into
//! fixed-length clips with a fused ground-truth mask, and split train/test.

use std::fmt;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::ir::{label_ir_frame, majority_vote, IrFrame, LabelingConfig};
use crate::mask::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipSource {
    Real,
    Synthetic,
}

/// A fixed-length sequence of RGB frames with one fused ground-truth mask.
#[derive(Debug, Clone)]
pub struct Clip {
    /// T frames, each (H, W, 3) in [0,1].
    pub frames: Vec<Array3<f32>>,
    pub gt_mask: BinaryMask,
    pub clip_id: String,
    pub source: ClipSource,
}

impl Clip {
    pub fn validate(&self, seq_len: usize) -> Result<()> {
        if self.frames.len() != seq_len {
            return Err(Error::input(format!(
                "clip {} has {} frames, expected {seq_len}",
                self.clip_id,
                self.frames.len()
            )));
        }
        let (h, w, _) = self.frames[0].dim();
        if h % 32 != 0 || w % 32 != 0 {
            return Err(Error::input(format!(
                "clip {} resolution {h}x{w} is not a multiple of 32",
                self.clip_id
            )));
        }
        for f in &self.frames {
            if f.dim() != (h, w, 3) {
                return Err(Error::input(format!(
                    "clip {} has frames of mixed shapes",
                    self.clip_id
                )));
            }
        }
        if self.gt_mask.dims() != (h, w) {
            return Err(Error::input(format!(
                "clip {} ground truth shape {:?} does not match frames",
                self.clip_id,
                self.gt_mask.dims()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub split: Split,
    pub gt_path: PathBuf,
    pub frame_paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seq_len: usize,
    pub clips: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.clips.iter().filter(move |c| c.split == split)
    }

    pub fn counts(&self) -> (usize, usize) {
        (
            self.split(Split::Train).count(),
            self.split(Split::Test).count(),
        )
    }

    /// Train and test must be disjoint by clip id and share no source frame.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for c in &self.clips {
            if !ids.insert(&c.clip_id) {
                return Err(Error::input(format!("duplicate clip id {}", c.clip_id)));
            }
        }
        let train_frames: std::collections::HashSet<_> = self
            .split(Split::Train)
            .flat_map(|c| c.frame_paths.iter())
            .collect();
        for c in self.split(Split::Test) {
            for f in &c.frame_paths {
                if train_frames.contains(f) {
                    return Err(Error::input(format!(
                        "frame {} appears in both splits",
                        f.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// One line per clip: `clip_id,split,gt_path,frame_1,...,frame_T`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("# seq_len={}\n", self.seq_len));
        for c in &self.clips {
            let frames: Vec<String> = c
                .frame_paths
                .iter()
                .map(|p| p.display().to_string())
                .collect();
            out.push_str(&format!(
                "{},{},{},{}\n",
                c.clip_id,
                c.split,
                c.gt_path.display(),
                frames.join(",")
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut seq_len = None;
        let mut clips = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("seq_len=") {
                    seq_len = Some(v.parse().map_err(|_| {
                        Error::input(format!("bad seq_len header in {}", path.display()))
                    })?);
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 4 {
                return Err(Error::input(format!(
                    "manifest line {} has too few fields",
                    lineno + 1
                )));
            }
            let split = match fields[1] {
                "train" => Split::Train,
                "test" => Split::Test,
                other => {
                    return Err(Error::input(format!(
                        "unknown split tag '{other}' on line {}",
                        lineno + 1
                    )))
                }
            };
            clips.push(ManifestEntry {
                clip_id: fields[0].to_string(),
                split,
                gt_path: PathBuf::from(fields[2]),
                frame_paths: fields[3..].iter().map(PathBuf::from).collect(),
            });
        }
        let seq_len =
            seq_len.ok_or_else(|| Error::input("manifest is missing the seq_len header"))?;
        for c in &clips {
            if c.frame_paths.len() != seq_len {
                return Err(Error::input(format!(
                    "clip {} lists {} frames, manifest seq_len is {seq_len}",
                    c.clip_id,
                    c.frame_paths.len()
                )));
            }
        }
        Ok(Self { seq_len, clips })
    }
}

/// How to force frame resolutions onto a multiple of 32.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionPolicy {
    /// Crop bottom/right rows and columns; never interpolates labels.
    Crop,
    /// Nearest-neighbor resample to the nearest lower multiple of 32.
    Resize,
}

pub fn target_dims(h: usize, w: usize) -> Result<(usize, usize)> {
    let th = h - h % 32;
    let tw = w - w % 32;
    if th < 32 || tw < 32 {
        return Err(Error::ingestion(format!(
            "frame {h}x{w} too small to reach a 32-multiple resolution"
        )));
    }
    Ok((th, tw))
}

pub fn conform_rgb(frame: &Array3<f32>, policy: ResolutionPolicy) -> Result<Array3<f32>> {
    let (h, w, _) = frame.dim();
    let (th, tw) = target_dims(h, w)?;
    if (th, tw) == (h, w) {
        return Ok(frame.clone());
    }
    Ok(match policy {
        ResolutionPolicy::Crop => frame.slice(ndarray::s![..th, ..tw, ..]).to_owned(),
        ResolutionPolicy::Resize => Array3::from_shape_fn((th, tw, 3), |(r, c, ch)| {
            frame[[r * h / th, c * w / tw, ch]]
        }),
    })
}

pub fn conform_ir(frame: &IrFrame, policy: ResolutionPolicy) -> Result<IrFrame> {
    let (h, w) = frame.dims();
    let (th, tw) = target_dims(h, w)?;
    if (th, tw) == (h, w) {
        return Ok(frame.clone());
    }
    let px = match policy {
        ResolutionPolicy::Crop => frame.pixels().slice(ndarray::s![..th, ..tw]).to_owned(),
        ResolutionPolicy::Resize => ndarray::Array2::from_shape_fn((th, tw), |(r, c)| {
            frame.pixels()[[r * h / th, c * w / tw]]
        }),
    };
    IrFrame::new(px, frame.frame_index)
}

fn sorted_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir.display().to_string(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Load index-aligned (RGB, IR) frame pairs from two directories of PNGs
/// ordered by filename.
pub fn ingest_video(
    rgb_dir: &Path,
    ir_dir: &Path,
    policy: ResolutionPolicy,
) -> Result<Vec<(Array3<f32>, IrFrame)>> {
    let rgb_paths = sorted_pngs(rgb_dir)?;
    let ir_paths = sorted_pngs(ir_dir)?;
    if rgb_paths.len() != ir_paths.len() {
        return Err(Error::ingestion(format!(
            "frame count mismatch: {} RGB frames vs {} IR frames",
            rgb_paths.len(),
            ir_paths.len()
        )));
    }
    let mut pairs = Vec::with_capacity(rgb_paths.len());
    for (idx, (rp, ip)) in rgb_paths.iter().zip(&ir_paths).enumerate() {
        let rgb = io::load_rgb_frame(rp)
            .map_err(|e| Error::ingestion(format!("unreadable RGB frame {idx}: {e}")))?;
        let ir = io::load_ir_frame(ip, idx)
            .map_err(|e| Error::ingestion(format!("unreadable IR frame {idx}: {e}")))?;
        let rgb = conform_rgb(&rgb, policy)?;
        let ir = conform_ir(&ir, policy)?;
        if (ir.dims().0, ir.dims().1, 3) != rgb.dim() {
            return Err(Error::ingestion(format!(
                "RGB/IR resolution mismatch at frame {idx}: {:?} vs {:?}",
                rgb.dim(),
                ir.dims()
            )));
        }
        pairs.push((rgb, ir));
    }
    Ok(pairs)
}

/// Cut consecutive, non-overlapping windows of `seq_len` frames. The fused
/// ground truth of each clip is the majority vote of its per-frame IR labels.
/// A trailing remainder shorter than `seq_len` is dropped.
pub fn build_clips(
    pairs: &[(Array3<f32>, IrFrame)],
    seq_len: usize,
    labeling: &LabelingConfig,
    id_prefix: &str,
    source: ClipSource,
) -> Result<Vec<Clip>> {
    if seq_len == 0 {
        return Err(Error::config("seq_len must be >= 1"));
    }
    let n_clips = pairs.len() / seq_len;
    let mut clips = Vec::with_capacity(n_clips);
    for k in 0..n_clips {
        let window = &pairs[k * seq_len..(k + 1) * seq_len];
        let labels = window
            .iter()
            .map(|(_, ir)| label_ir_frame(ir, labeling))
            .collect::<Result<Vec<_>>>()?;
        let gt_mask = majority_vote(&labels, labeling.tie_to_fire)?;
        clips.push(Clip {
            frames: window.iter().map(|(rgb, _)| rgb.clone()).collect(),
            gt_mask,
            clip_id: format!("{id_prefix}_{k:04}"),
            source,
        });
    }
    Ok(clips)
}

/// Deterministically shuffle clip ids by seed and split at clip granularity.
pub fn split_dataset(
    clips: &[ManifestEntry],
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if clips.is_empty() {
        return Err(Error::input("cannot split an empty clip list"));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config(format!(
            "test_fraction must be in (0,1), got {test_fraction}"
        )));
    }
    let seq_len = clips[0].frame_paths.len();
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_test = ((clips.len() as f64 * test_fraction).round() as usize).clamp(1, clips.len() - 1);
    let test_set: std::collections::HashSet<usize> = order[..n_test].iter().copied().collect();
    let mut entries: Vec<ManifestEntry> = clips.to_vec();
    for (i, e) in entries.iter_mut().enumerate() {
        e.split = if test_set.contains(&i) {
            Split::Test
        } else {
            Split::Train
        };
    }
    let manifest = DatasetManifest {
        seq_len,
        clips: entries,
    };
    manifest.check_disjoint()?;
    Ok(manifest)
}

/// Stack a clip's frames into one (T, H, W, 3) array.
pub fn stack_clip_frames(frames: &[Array3<f32>]) -> Result<ndarray::Array4<f32>> {
    let views: Vec<_> = frames.iter().map(|f| f.view()).collect();
    ndarray::stack(Axis(0), &views)
        .map_err(|e| Error::input(format!("cannot stack clip frames: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic_scene, SynthSceneConfig};

    fn synth_pairs(n_frames: usize) -> Vec<(Array3<f32>, IrFrame)> {
        let cfg = SynthSceneConfig {
            n_frames,
            ..Default::default()
        };
        let (rgb, ir) = generate_synthetic_scene(&cfg).unwrap();
        rgb.into_iter().zip(ir).collect()
    }

    fn entry(id: &str, n_frames: usize) -> ManifestEntry {
        ManifestEntry {
            clip_id: id.to_string(),
            split: Split::Train,
            gt_path: PathBuf::from(format!("{id}_gt.png")),
            frame_paths: (0..n_frames)
                .map(|i| PathBuf::from(format!("{id}_f{i}.png")))
                .collect(),
        }
    }

    #[test]
    fn build_clips_window_counts() {
        let labeling = LabelingConfig::default();
        let pairs = synth_pairs(100);
        let clips = build_clips(&pairs, 20, &labeling, "v0", ClipSource::Synthetic).unwrap();
        assert_eq!(clips.len(), 5);
        for c in &clips {
            c.validate(20).unwrap();
        }
        let pairs = synth_pairs(110);
        assert_eq!(
            build_clips(&pairs, 20, &labeling, "v0", ClipSource::Synthetic)
                .unwrap()
                .len(),
            5
        );
        let pairs = synth_pairs(19);
        assert!(
            build_clips(&pairs, 20, &labeling, "v0", ClipSource::Synthetic)
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn gt_covers_hotspot() {
        let pairs = synth_pairs(20);
        let clips = build_clips(
            &pairs,
            20,
            &LabelingConfig::default(),
            "v0",
            ClipSource::Synthetic,
        )
        .unwrap();
        let gt = &clips[0].gt_mask;
        // The static hot disk must survive fusion; check its centre pixels.
        for r in 28..36 {
            for c in 28..36 {
                assert!(gt.get(r, c));
            }
        }
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let clips: Vec<ManifestEntry> = (0..10).map(|i| entry(&format!("c{i}"), 20)).collect();
        let a = split_dataset(&clips, 0.2, 42).unwrap();
        let b = split_dataset(&clips, 0.2, 42).unwrap();
        assert_eq!(a.counts(), (8, 2));
        let tags = |m: &DatasetManifest| m.clips.iter().map(|c| c.split).collect::<Vec<_>>();
        assert_eq!(tags(&a), tags(&b));
        a.check_disjoint().unwrap();
    }

    #[test]
    fn split_reference_counts() {
        let clips: Vec<ManifestEntry> = (0..509).map(|i| entry(&format!("c{i}"), 20)).collect();
        let m = split_dataset(&clips, 155.0 / 509.0, 0).unwrap();
        assert_eq!(m.counts(), (354, 155));
    }

    #[test]
    fn split_rejects_bad_fraction_and_empty() {
        let clips: Vec<ManifestEntry> = (0..4).map(|i| entry(&format!("c{i}"), 20)).collect();
        assert!(split_dataset(&clips, 1.0, 0).is_err());
        assert!(split_dataset(&[], 0.5, 0).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let clips: Vec<ManifestEntry> = (0..6).map(|i| entry(&format!("c{i}"), 3)).collect();
        let m = split_dataset(&clips, 0.34, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.txt");
        m.write(&path).unwrap();
        let back = DatasetManifest::read(&path).unwrap();
        assert_eq!(back.seq_len, 3);
        assert_eq!(back.clips.len(), 6);
        assert_eq!(back.counts(), m.counts());
    }

    #[test]
    fn crop_policy_dims() {
        let frame = Array3::<f32>::zeros((720, 1280, 3));
        let out = conform_rgb(&frame, ResolutionPolicy::Crop).unwrap();
        assert_eq!(out.dim(), (704, 1280, 3));
    }

    #[test]
    fn ingest_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let rgb_dir = dir.path().join("rgb");
        let ir_dir = dir.path().join("ir");
        std::fs::create_dir_all(&rgb_dir).unwrap();
        std::fs::create_dir_all(&ir_dir).unwrap();
        let cfg = SynthSceneConfig {
            n_frames: 3,
            ..Default::default()
        };
        let (rgb, ir) = generate_synthetic_scene(&cfg).unwrap();
        for (i, f) in rgb.iter().enumerate() {
            io::save_rgb_frame(f, &rgb_dir.join(format!("{i:05}.png"))).unwrap();
        }
        for f in ir.iter().take(2) {
            let px = f.pixels().mapv(|v| v);
            let frame = IrFrame::new(px, f.frame_index).unwrap();
            let mask_path = ir_dir.join(format!("{:05}.png", f.frame_index));
            // save as 8-bit gray
            let (h, w) = frame.dims();
            let img = image::GrayImage::from_fn(w as u32, h as u32, |c, r| {
                image::Luma([(frame.pixels()[[r as usize, c as usize]] * 255.0) as u8])
            });
            img.save(&mask_path).unwrap();
        }
        let err = ingest_video(&rgb_dir, &ir_dir, ResolutionPolicy::Crop).unwrap_err();
        assert!(err.to_string().contains("mismatch"));
    }

    #[test]
    fn ingest_aligned_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let rgb_dir = dir.path().join("rgb");
        let ir_dir = dir.path().join("ir");
        std::fs::create_dir_all(&rgb_dir).unwrap();
        std::fs::create_dir_all(&ir_dir).unwrap();
        let cfg = SynthSceneConfig {
            n_frames: 4,
            ..Default::default()
        };
        let (rgb, ir) = generate_synthetic_scene(&cfg).unwrap();
        for (i, f) in rgb.iter().enumerate() {
            io::save_rgb_frame(f, &rgb_dir.join(format!("{i:05}.png"))).unwrap();
        }
        for f in &ir {
            let (h, w) = f.dims();
            let img = image::GrayImage::from_fn(w as u32, h as u32, |c, r| {
                image::Luma([(f.pixels()[[r as usize, c as usize]] * 255.0) as u8])
            });
            img.save(ir_dir.join(format!("{:05}.png", f.frame_index)))
                .unwrap();
        }
        let pairs = ingest_video(&rgb_dir, &ir_dir, ResolutionPolicy::Crop).unwrap();
        assert_eq!(pairs.len(), 4);
        assert_eq!(pairs[2].1.frame_index, 2);
    }
}
