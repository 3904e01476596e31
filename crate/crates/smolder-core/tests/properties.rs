//! Randomized invariants for masks, label fusion, and scoring.

use proptest::prelude::*;

use smolder_core::ir::majority_vote;
use smolder_core::mask::BinaryMask;
use smolder_core::metrics::{blob_precision, dice_score, extract_blobs};

fn mask_strategy(h: usize, w: usize) -> impl Strategy<Value = BinaryMask> {
    proptest::collection::vec(any::<bool>(), h * w)
        .prop_map(move |cells| BinaryMask::from_fn(h, w, |r, c| cells[r * w + c]))
}

fn subset(a: &BinaryMask, b: &BinaryMask) -> bool {
    let (h, w) = a.dims();
    (0..h).all(|r| (0..w).all(|c| !a.get(r, c) || b.get(r, c)))
}

proptest! {
    #[test]
    fn dilation_is_extensive(m in mask_strategy(12, 12)) {
        let d = m.dilate(3).unwrap();
        prop_assert!(subset(&m, &d));
        // Growing the kernel never shrinks the result.
        let d5 = m.dilate(5).unwrap();
        prop_assert!(subset(&d, &d5));
    }

    #[test]
    fn erosion_is_anti_extensive(m in mask_strategy(12, 12)) {
        let e = m.erode(3).unwrap();
        prop_assert!(subset(&e, &m));
        let e5 = m.erode(5).unwrap();
        prop_assert!(subset(&e5, &e));
    }

    #[test]
    fn opening_and_closing_bracket_the_mask(m in mask_strategy(12, 12)) {
        let opening = m.erode(3).unwrap().dilate(3).unwrap();
        prop_assert!(subset(&opening, &m));
        // Out-of-image counts as background, so erosion always clears the
        // border; the closing-superset law only holds for interior pixels.
        let closing = m.dilate(3).unwrap().erode(3).unwrap();
        for r in 1..11 {
            for c in 1..11 {
                prop_assert!(!m.get(r, c) || closing.get(r, c), "pixel ({}, {})", r, c);
            }
        }
    }

    #[test]
    fn fill_holes_is_extensive_and_idempotent(m in mask_strategy(12, 12)) {
        let f = m.fill_holes();
        prop_assert!(subset(&m, &f));
        prop_assert_eq!(f.fill_holes(), f);
    }

    #[test]
    fn remove_small_keeps_only_large_blobs(m in mask_strategy(12, 12), min in 1usize..20) {
        let cleaned = m.remove_small(min);
        prop_assert!(subset(&cleaned, &m));
        for blob in extract_blobs(&cleaned) {
            prop_assert!(blob.area() >= min);
        }
    }

    #[test]
    fn blobs_partition_the_foreground(m in mask_strategy(12, 12)) {
        let blobs = extract_blobs(&m);
        let total: usize = blobs.iter().map(|b| b.area()).sum();
        prop_assert_eq!(total, m.count_foreground());
    }

    #[test]
    fn majority_vote_matches_pixel_counts(
        stacks in proptest::collection::vec(mask_strategy(6, 6), 1..7),
        tie_to_fire in any::<bool>(),
    ) {
        let fused = majority_vote(&stacks, tie_to_fire).unwrap();
        let t = stacks.len();
        for r in 0..6 {
            for c in 0..6 {
                let n = stacks.iter().filter(|m| m.get(r, c)).count();
                let expected = if tie_to_fire { 2 * n >= t } else { 2 * n > t };
                prop_assert_eq!(fused.get(r, c), expected);
            }
        }
    }

    #[test]
    fn dice_is_symmetric_and_bounded(a in mask_strategy(10, 10), b in mask_strategy(10, 10)) {
        let ab = dice_score(&a, &b).unwrap();
        let ba = dice_score(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(dice_score(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn blob_precision_counts_are_consistent(
        pred in mask_strategy(16, 16),
        gt in mask_strategy(16, 16),
    ) {
        let pred_blobs = extract_blobs(&pred);
        let bp = blob_precision(&pred_blobs, &extract_blobs(&gt));
        prop_assert_eq!(bp.true_positives + bp.false_positives, pred_blobs.len());
        match bp.precision {
            None => prop_assert!(pred_blobs.is_empty()),
            Some(p) => {
                prop_assert!((0.0..=1.0).contains(&p));
                let expected = bp.true_positives as f64 / pred_blobs.len() as f64;
                prop_assert_eq!(p, expected);
            }
        }
    }
}
