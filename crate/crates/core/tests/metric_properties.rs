use facesynth_core::classes::SemanticClass;
use facesynth_core::metrics::{confusion_counts, f1_scores, failure_rate, nme, MergeSpec, Point};
use facesynth_core::seed::rng_from_seed;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn face(seed: u64) -> Vec<Point> {
    let mut rng = rng_from_seed(seed);
    (0..68).map(|_| [rng.random_range(0.0..200.0), rng.random_range(0.0..200.0)]).collect()
}

fn masks(seed: u64, len: usize) -> (Vec<u8>, Vec<u8>) {
    let mut rng = rng_from_seed(seed);
    let classes = SemanticClass::PARSING_COUNT as u8;
    let gt: Vec<u8> = (0..len).map(|_| rng.random_range(0..classes)).collect();
    let pred = gt.iter().map(|&g| if rng.random_bool(0.7) { g } else { rng.random_range(0..classes) }).collect();
    (pred, gt)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn nme_is_similarity_invariant(seed in any::<u64>(), scale in 0.05f64..20.0, angle in -3.2f64..3.2, tx in -500.0f64..500.0, ty in -500.0f64..500.0) {
        let (pred, gt) = (face(seed), face(seed ^ 0xff));
        let (c, s) = (angle.cos(), angle.sin());
        let map = |pts: &[Point]| -> Vec<Point> {
            pts.iter().map(|p| [scale * (c * p[0] - s * p[1]) + tx, scale * (s * p[0] + c * p[1]) + ty]).collect()
        };
        let before = nme(&pred, &gt).unwrap();
        let after = nme(&map(&pred), &map(&gt)).unwrap();
        prop_assert!((before - after).abs() <= 1e-9 * before.max(1.0));
    }

    #[test]
    fn failure_rate_is_monotone_in_threshold(errors in prop::collection::vec(0.0f64..0.5, 1..200), t1 in 0.0f64..0.5, t2 in 0.0f64..0.5) {
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        prop_assert!(failure_rate(&errors, hi).unwrap() <= failure_rate(&errors, lo).unwrap());
    }

    #[test]
    fn f1_ignores_pixel_order(seed in any::<u64>(), len in 1usize..500) {
        let (pred, gt) = masks(seed, len);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng_from_seed(seed ^ 7));
        let shuffled_pred: Vec<u8> = order.iter().map(|&i| pred[i]).collect();
        let shuffled_gt: Vec<u8> = order.iter().map(|&i| gt[i]).collect();
        let n = SemanticClass::PARSING_COUNT;
        let a = f1_scores(&confusion_counts(&pred, &gt, n).unwrap(), &MergeSpec::helen());
        let b = f1_scores(&confusion_counts(&shuffled_pred, &shuffled_gt, n).unwrap(), &MergeSpec::helen());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn merged_masks_match_merged_counts(seed in any::<u64>(), len in 1usize..500) {
        let (pred, gt) = masks(seed, len);
        let merge = MergeSpec::helen();
        let report = f1_scores(&confusion_counts(&pred, &gt, SemanticClass::PARSING_COUNT).unwrap(), &merge);
        let groups: Vec<&Vec<u8>> = merge.groups.iter().map(|(_, ids)| ids).chain([&merge.overall]).collect();
        let scores: Vec<f64> = report.merged.iter().map(|s| s.f1).chain([report.overall.f1]).collect();
        for (ids, score) in groups.into_iter().zip(scores) {
            let binary = |m: &[u8]| m.iter().map(|c| u8::from(ids.contains(c))).collect::<Vec<u8>>();
            let direct = f1_scores(&confusion_counts(&binary(&pred), &binary(&gt), 2).unwrap(), &MergeSpec { groups: vec![], overall: vec![1] });
            prop_assert!((direct.overall.f1 - score).abs() < 1e-12);
        }
    }
}

#[test]
fn perfect_predictions_score_perfectly() {
    let gt = face(1);
    assert_eq!(nme(&gt, &gt).unwrap(), 0.0);
    assert_eq!(failure_rate(&[0.0; 10], 0.1).unwrap(), 0.0);
    let (_, mask) = masks(2, 300);
    let report = f1_scores(&confusion_counts(&mask, &mask, SemanticClass::PARSING_COUNT).unwrap(), &MergeSpec::helen());
    assert!(report.per_class.iter().all(|s| s.f1 == 1.0));
    assert_eq!(report.overall.f1, 1.0);
}
