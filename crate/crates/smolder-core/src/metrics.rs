//! Scoring: Dice overlap, blob-wise precision with the 30% overlap rule, and
//! clip-level fire classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, Blob};

/// Fraction of a ground-truth blob that a prediction must cover to count as
/// a true positive; the comparison is strict.
pub const BLOB_MATCH_FRACTION: f64 = 0.30;

/// Fraction of ground-truth spots that must be matched for a clip to be
/// classified as fire; the comparison is strict.
pub const CLIP_FIRE_FRACTION: f64 = 0.30;

/// 2|P∩G| / (|P|+|G|); two empty masks score 1.0.
pub fn dice_score(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return Err(Error::input(format!(
            "dice_score shape mismatch: {:?} vs {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let p = pred.count_foreground();
    let g = gt.count_foreground();
    if p + g == 0 {
        return Ok(1.0);
    }
    let inter = pred.intersection_area(gt);
    Ok(2.0 * inter as f64 / (p + g) as f64)
}

pub fn extract_blobs(mask: &BinaryMask) -> Vec<Blob> {
    mask.blobs()
}

fn blob_intersection(a: &Blob, b: &Blob) -> usize {
    // Pixel lists are sorted row-major; merge-count the overlap.
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.pixels.len() && j < b.pixels.len() {
        match a.pixels[i].cmp(&b.pixels[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Blob-wise true/false positives. A predicted blob is a true positive iff
/// it covers strictly more than [`BLOB_MATCH_FRACTION`] of some ground-truth
/// blob's area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobPrecision {
    pub true_positives: usize,
    pub false_positives: usize,
    /// `None` when no blobs were predicted; such clips are excluded from
    /// aggregate precision.
    pub precision: Option<f64>,
    /// Ground-truth blobs covered by at least one matching prediction.
    pub matched_gt: usize,
}

pub fn blob_precision(pred_blobs: &[Blob], gt_blobs: &[Blob]) -> BlobPrecision {
    let mut tp = 0;
    let mut gt_hit = vec![false; gt_blobs.len()];
    for pred in pred_blobs {
        let mut is_tp = false;
        for (gi, gt) in gt_blobs.iter().enumerate() {
            let inter = blob_intersection(pred, gt);
            if (inter as f64) > BLOB_MATCH_FRACTION * gt.area() as f64 {
                is_tp = true;
                gt_hit[gi] = true;
            }
        }
        if is_tp {
            tp += 1;
        }
    }
    let fp = pred_blobs.len() - tp;
    let precision = if pred_blobs.is_empty() {
        None
    } else {
        Some(tp as f64 / (tp + fp) as f64)
    };
    BlobPrecision {
        true_positives: tp,
        false_positives: fp,
        precision,
        matched_gt: gt_hit.iter().filter(|&&h| h).count(),
    }
}

/// Clip-level fire/non-fire labels. A fire clip is predicted as fire iff
/// strictly more than [`CLIP_FIRE_FRACTION`] of its ground-truth spots are
/// matched; a non-fire clip is predicted as fire iff anything was predicted.
pub fn classify_clip(pred_blobs: &[Blob], gt_blobs: &[Blob]) -> (bool, bool) {
    let gt_fire = !gt_blobs.is_empty();
    let pred_fire = if gt_fire {
        let matched = blob_precision(pred_blobs, gt_blobs).matched_gt;
        (matched as f64) > CLIP_FIRE_FRACTION * gt_blobs.len() as f64
    } else {
        !pred_blobs.is_empty()
    };
    (gt_fire, pred_fire)
}

/// Per-clip scores, serialized one record per line in the metrics file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub clip_id: String,
    pub dice: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub precision: Option<f64>,
    pub gt_is_fire: bool,
    pub classified_as_fire: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AggregateMetrics {
    pub n_clips: usize,
    pub mean_dice: f64,
    /// Mean over clips with a defined precision.
    pub mean_precision: f64,
    pub n_precision_clips: usize,
    pub classification_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_clip: Vec<ClipMetrics>,
    pub aggregate: AggregateMetrics,
}

impl MetricsReport {
    pub fn from_clips(per_clip: Vec<ClipMetrics>) -> Result<Self> {
        if per_clip.is_empty() {
            return Err(Error::input("cannot aggregate an empty set of clips"));
        }
        let aggregate = aggregate(&per_clip);
        Ok(Self {
            per_clip,
            aggregate,
        })
    }

    pub fn score_pair(clip_id: &str, pred: &BinaryMask, gt: &BinaryMask) -> Result<ClipMetrics> {
        let dice = dice_score(pred, gt)?;
        let pred_blobs = extract_blobs(pred);
        let gt_blobs = extract_blobs(gt);
        let bp = blob_precision(&pred_blobs, &gt_blobs);
        let (gt_is_fire, classified_as_fire) = classify_clip(&pred_blobs, &gt_blobs);
        Ok(ClipMetrics {
            clip_id: clip_id.to_string(),
            dice,
            true_positives: bp.true_positives,
            false_positives: bp.false_positives,
            precision: bp.precision,
            gt_is_fire,
            classified_as_fire,
        })
    }
}

/// Recompute aggregate values from per-clip records.
pub fn aggregate(per_clip: &[ClipMetrics]) -> AggregateMetrics {
    let n = per_clip.len();
    let mean_dice = per_clip.iter().map(|c| c.dice).sum::<f64>() / n as f64;
    let defined: Vec<f64> = per_clip.iter().filter_map(|c| c.precision).collect();
    let mean_precision = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    let correct = per_clip
        .iter()
        .filter(|c| c.gt_is_fire == c.classified_as_fire)
        .count();
    AggregateMetrics {
        n_clips: n,
        mean_dice,
        mean_precision,
        n_precision_clips: defined.len(),
        classification_accuracy: correct as f64 / n as f64,
    }
}
