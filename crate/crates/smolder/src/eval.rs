//! Split evaluation: run the model over every clip in a split, score each
//! prediction, and write the per-clip and aggregate metrics.

use std::path::Path;

use burn::tensor::activation::sigmoid;

use smolder_core::mask::BinaryMask;
use smolder_core::metrics::{ClipMetrics, MetricsReport};

use crate::data::tensor_to_array2;
use crate::error::{Error, Result};
use crate::model::Segmenter;
use crate::train::ClipStore;
use crate::Cpu;

/// Score every clip in `store`: predict, binarize at `threshold`, then
/// compute Dice, blob precision, and clip classification against the
/// stored ground truth.
pub fn evaluate_store(
    model: &Segmenter<Cpu>,
    store: &ClipStore,
    seq_len: usize,
    threshold: f64,
) -> Result<MetricsReport> {
    let device = Default::default();
    let mut per_clip = Vec::with_capacity(store.len());
    for idx in 0..store.len() {
        let logits = model.forward(store.input(idx, &device), seq_len)?;
        let [_, _, h, w] = logits.dims();
        let probs = tensor_to_array2(sigmoid(logits).reshape([h, w]));
        let pred = BinaryMask::from_fn(h, w, |r, c| probs[[r, c]] as f64 >= threshold);
        per_clip.push(
            MetricsReport::score_pair(&store.ids[idx], &pred, &store.masks[idx])
                .map_err(Error::Core)?,
        );
    }
    MetricsReport::from_clips(per_clip).map_err(Error::Core)
}

/// One line per clip (`clip_id,dice,tp,fp,precision,gt_fire,pred_fire`)
/// followed by one `aggregate,...` line.
pub fn write_metrics(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut out =
        String::from("clip_id,dice,true_positives,false_positives,precision,gt_fire,pred_fire\n");
    for c in &report.per_clip {
        let precision = c.precision.map(|p| p.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.clip_id,
            c.dice,
            c.true_positives,
            c.false_positives,
            precision,
            c.gt_is_fire,
            c.classified_as_fire
        ));
    }
    let a = &report.aggregate;
    out.push_str(&format!(
        "aggregate,n_clips={},mean_dice={},mean_precision={},n_precision_clips={},classification_accuracy={}\n",
        a.n_clips, a.mean_dice, a.mean_precision, a.n_precision_clips, a.classification_accuracy
    ));
    std::fs::write(path, out)
        .map_err(|e| smolder_core::Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Re-read a metrics file written by [`write_metrics`] and recompute the
/// aggregate from its per-clip lines.
pub fn read_metrics(path: &Path) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| smolder_core::Error::io(path.display().to_string(), e))?;
    let mut per_clip = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.starts_with("aggregate,") || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::Inference(format!(
                "metrics line {} has {} fields, expected 7",
                lineno + 1,
                f.len()
            )));
        }
        let parse_err =
            |what: &str| Error::Inference(format!("bad {what} on metrics line {}", lineno + 1));
        per_clip.push(ClipMetrics {
            clip_id: f[0].to_string(),
            dice: f[1].parse().map_err(|_| parse_err("dice"))?,
            true_positives: f[2].parse().map_err(|_| parse_err("true_positives"))?,
            false_positives: f[3].parse().map_err(|_| parse_err("false_positives"))?,
            precision: if f[4].is_empty() {
                None
            } else {
                Some(f[4].parse().map_err(|_| parse_err("precision"))?)
            },
            gt_is_fire: f[5].parse().map_err(|_| parse_err("gt_fire"))?,
            classified_as_fire: f[6].parse().map_err(|_| parse_err("pred_fire"))?,
        });
    }
    MetricsReport::from_clips(per_clip).map_err(Error::Core)
}

/// Human-readable summary table.
pub fn format_report(report: &MetricsReport) -> String {
    let a = &report.aggregate;
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>8} {:>6} {:>6} {:>10} {:>8}\n",
        "clip", "dice", "tp", "fp", "precision", "class"
    ));
    for c in &report.per_clip {
        let precision = c
            .precision
            .map(|p| format!("{p:.4}"))
            .unwrap_or_else(|| "-".to_string());
        let class = match (c.gt_is_fire, c.classified_as_fire) {
            (true, true) | (false, false) => "ok",
            _ => "wrong",
        };
        out.push_str(&format!(
            "{:<24} {:>8.4} {:>6} {:>6} {:>10} {:>8}\n",
            c.clip_id, c.dice, c.true_positives, c.false_positives, precision, class
        ));
    }
    out.push_str(&format!(
        "\nclips: {}  mean dice: {:.4}  mean precision: {:.4} (over {} clips)  classification accuracy: {:.4}\n",
        a.n_clips, a.mean_dice, a.mean_precision, a.n_precision_clips, a.classification_accuracy
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use smolder_core::metrics::aggregate;

    fn sample() -> MetricsReport {
        MetricsReport::from_clips(vec![
            ClipMetrics {
                clip_id: "c0".into(),
                dice: 0.91,
                true_positives: 1,
                false_positives: 1,
                precision: Some(0.5),
                gt_is_fire: true,
                classified_as_fire: true,
            },
            ClipMetrics {
                clip_id: "c1".into(),
                dice: 0.2,
                true_positives: 0,
                false_positives: 0,
                precision: None,
                gt_is_fire: true,
                classified_as_fire: false,
            },
        ])
        .unwrap()
    }

    #[test]
    fn metrics_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let report = sample();
        write_metrics(&report, &path).unwrap();
        let back = read_metrics(&path).unwrap();
        assert_eq!(back.per_clip.len(), 2);
        assert_eq!(back.per_clip[0].clip_id, "c0");
        assert_eq!(back.per_clip[1].precision, None);
        assert_eq!(back.aggregate, report.aggregate);
        // The aggregate is recomputed from lines, not trusted from the file.
        assert_eq!(back.aggregate, aggregate(&back.per_clip));
    }

    #[test]
    fn format_mentions_every_clip() {
        let text = format_report(&sample());
        assert!(text.contains("c0"));
        assert!(text.contains("c1"));
        assert!(text.contains("mean dice"));
    }
}
