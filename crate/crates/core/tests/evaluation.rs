use std::collections::BTreeSet;

use hoigen_core::evalmap::{average_precision, map_report, match_pairs, DetectionRecord, GroundTruthRecord};
use hoigen_core::geometry::BBox;
use hoigen_core::taxonomy::{HoiPair, HoiTaxonomy, ZeroShotSplit, Setting};
use proptest::prelude::*;

/// Precision-recall staircase: every true positive adds `1 / num_gt` recall at
/// the best precision reachable at that rank or later.
fn staircase_ap(flags: &[bool], num_gt: usize) -> f64 {
    let precision: Vec<f64> = (0..flags.len())
        .map(|k| flags[..=k].iter().filter(|&&f| f).count() as f64 / (k + 1) as f64)
        .collect();
    let mut ap = 0.0;
    for k in 0..flags.len() {
        if flags[k] {
            let best = precision[k..].iter().copied().fold(0.0, f64::max);
            ap += best / num_gt as f64;
        }
    }
    ap
}

#[test]
fn hand_case() {
    let ap = average_precision(&[true, false, true], 2).unwrap();
    assert!((ap - 5.0 / 6.0).abs() < 1e-9, "{ap}");
}

#[test]
fn no_ground_truth_is_undefined() {
    assert_eq!(average_precision(&[false, true], 0), None);
    assert_eq!(average_precision(&[], 3), Some(0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn ap_equals_staircase(flags in prop::collection::vec(any::<bool>(), 0..=10), extra in 0usize..=5) {
        let tps = flags.iter().filter(|&&f| f).count();
        let num_gt = (tps + extra).max(1);
        prop_assume!(tps <= num_gt);
        let ap = average_precision(&flags, num_gt).unwrap();
        prop_assert!((ap - staircase_ap(&flags, num_gt)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&ap));
    }

    #[test]
    fn promoting_a_hit_never_hurts(mut flags in prop::collection::vec(any::<bool>(), 2..=10), at in 0usize..9) {
        let at = at % (flags.len() - 1);
        flags[at] = false;
        flags[at + 1] = true;
        let num_gt = flags.iter().filter(|&&f| f).count();
        let mut better = flags.clone();
        better.swap(at, at + 1);
        prop_assert!(average_precision(&better, num_gt).unwrap() >= average_precision(&flags, num_gt).unwrap() - 1e-15);
    }
}

fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
    BBox::new(x, y, x + w, y + h).unwrap()
}

fn det(image: u64, h: BBox, o: BBox, hoi: usize, score: f64) -> DetectionRecord {
    DetectionRecord { image, human: h, object: o, hoi, score }
}

#[test]
fn duplicate_detections_count_once() {
    let h = bx(0.0, 0.0, 10.0, 10.0);
    let o = bx(20.0, 0.0, 10.0, 10.0);
    let gt = [GroundTruthRecord { image: 1, human: h, object: o, hoi: 0 }];
    let dets = [det(1, h, o, 0, 0.9), det(1, h, o, 0, 0.8), det(2, h, o, 0, 0.95)];
    let m = match_pairs(&dets, &gt, 0.5);
    assert_eq!(m, vec![(2, false), (0, true), (1, false)]);
}

#[test]
fn min_iou_rule() {
    let h = bx(0.0, 0.0, 10.0, 10.0);
    let o = bx(20.0, 0.0, 10.0, 10.0);
    let gt = [GroundTruthRecord { image: 1, human: h, object: o, hoi: 0 }];
    // Human box overlaps perfectly, object only a third.
    let shifted = bx(25.0, 0.0, 10.0, 10.0);
    assert_eq!(match_pairs(&[det(1, h, shifted, 0, 0.5)], &gt, 0.5), vec![(0, false)]);
    assert_eq!(match_pairs(&[det(1, h, shifted, 0, 0.5)], &gt, 0.3), vec![(0, true)]);
    // Wrong category never matches.
    assert_eq!(match_pairs(&[det(1, h, o, 1, 0.5)], &gt, 0.5), vec![(0, false)]);
}

fn strategy_instance() -> impl Strategy<Value = (Vec<DetectionRecord>, Vec<GroundTruthRecord>)> {
    let b = (0u8..4, 0u8..4).prop_map(|(x, y)| bx(f64::from(x) * 6.0, f64::from(y) * 6.0, 10.0, 10.0));
    let g = (0u64..2, b.clone(), b.clone(), 0usize..2).prop_map(|(image, human, object, hoi)| GroundTruthRecord {
        image,
        human,
        object,
        hoi,
    });
    let d = (0u64..2, b.clone(), b, 0usize..2, 0u8..6).prop_map(|(image, h, o, hoi, s)| det(image, h, o, hoi, f64::from(s) / 5.0));
    (prop::collection::vec(d, 0..=10), prop::collection::vec(g, 0..=5))
}

proptest! {
    #[test]
    fn matching_invariants((dets, gt) in strategy_instance()) {
        let m = match_pairs(&dets, &gt, 0.5);
        prop_assert_eq!(m.len(), dets.len());
        let idx: BTreeSet<usize> = m.iter().map(|p| p.0).collect();
        prop_assert_eq!(idx.len(), dets.len());
        for w in m.windows(2) {
            prop_assert!(dets[w[0].0].score >= dets[w[1].0].score);
        }
        for hoi in 0..2 {
            let hits = m.iter().filter(|(i, tp)| *tp && dets[*i].hoi == hoi).count();
            prop_assert!(hits <= gt.iter().filter(|g| g.hoi == hoi).count());
        }
        // Reversing the input order changes nothing.
        let rev: Vec<DetectionRecord> = dets.iter().rev().copied().collect();
        let flags: Vec<bool> = m.iter().map(|p| p.1).collect();
        let flags_rev: Vec<bool> = match_pairs(&rev, &gt, 0.5).iter().map(|p| p.1).collect();
        prop_assert_eq!(flags, flags_rev);
    }
}

fn tiny_taxonomy() -> HoiTaxonomy {
    HoiTaxonomy::new(
        vec!["cup".into(), "kite".into()],
        vec!["hold".into(), "fly".into()],
        vec![HoiPair { verb: 0, object: 0 }, HoiPair { verb: 1, object: 1 }, HoiPair { verb: 0, object: 1 }],
        vec![50, 5, 30],
    )
    .unwrap()
}

#[test]
fn categories_without_ground_truth_are_left_out() {
    let tax = tiny_taxonomy();
    let split = ZeroShotSplit::from_unseen(&tax, Setting::Uc, 0, 1, [2].into_iter().collect()).unwrap();
    let h = bx(0.0, 0.0, 10.0, 10.0);
    let o = bx(20.0, 0.0, 10.0, 10.0);
    let gt = [
        GroundTruthRecord { image: 1, human: h, object: o, hoi: 0 },
        GroundTruthRecord { image: 1, human: h, object: o, hoi: 2 },
    ];
    let dets = [det(1, h, o, 0, 0.9), det(1, h, o, 1, 0.9), det(1, h, o, 2, 0.1), det(2, h, o, 2, 0.3)];
    let (rare, _) = tax.rarity_partition();
    let r = map_report(&dets, &gt, &split, &rare, 0.5).unwrap();
    assert_eq!(r.per_category[0], Some(1.0));
    assert_eq!(r.per_category[1], None);
    assert_eq!(r.per_category[2], Some(0.5));
    assert_eq!(r.full, Some(0.75));
    assert_eq!(r.seen, Some(1.0));
    assert_eq!(r.unseen, Some(0.5));
    assert_eq!(r.rare, None);
    assert!(map_report(&[det(1, h, o, 7, 0.5)], &gt, &split, &rare, 0.5).is_err());
}
