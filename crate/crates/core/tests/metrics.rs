mod common;

use common::rng;
use common::roc::{brute_roc, eer_on_curve, pair_auc, random_series};
use itae::metrics::{roc_auc_eer, Metrics};
use itae::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

#[test]
fn auc_matches_pair_counting_on_random_series() {
    for seed in 0..100 {
        let (s, l) = random_series(seed);
        let roc = roc_auc_eer(&s, &l).unwrap();
        let oracle = pair_auc(&s, &l);
        assert!(
            (roc.auc - oracle).abs() < 1e-9,
            "seed {seed}: {} vs {oracle}",
            roc.auc
        );
    }
}

#[test]
fn eer_is_where_fpr_meets_fnr() {
    for seed in 0..100 {
        let (s, l) = random_series(seed + 1000);
        let roc = roc_auc_eer(&s, &l).unwrap();
        let pts = brute_roc(&s, &l);
        assert!(eer_on_curve(&pts, roc.eer), "seed {seed}: eer {}", roc.eer);
        let got: Vec<(f64, f64)> = roc.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(got, pts, "seed {seed}");
    }
}

#[test]
fn four_frame_pairs() {
    let s = [0.9, 0.8, 0.3, 0.2];
    let l = [true, false, true, false];
    assert_eq!(pair_auc(&s, &l), 0.75);
    assert!((roc_auc_eer(&s, &l).unwrap().auc - 0.75).abs() < 1e-12);
}

#[test]
fn perfect_separation_gives_one_and_zero() {
    let s: Vec<f64> = (0..50).map(f64::from).collect();
    let l: Vec<bool> = (0..50).map(|i| i >= 30).collect();
    let roc = roc_auc_eer(&s, &l).unwrap();
    assert_eq!(roc.auc, 1.0);
    assert_eq!(roc.eer, 0.0);
}

#[test]
fn unrelated_labels_give_half() {
    let mut r = rng(7);
    let mut l: Vec<bool> = (0..10_000).map(|i| i % 4 == 0).collect();
    l.shuffle(&mut r);
    let s: Vec<f64> = (0..10_000).map(|_| r.random::<f64>()).collect();
    let auc = roc_auc_eer(&s, &l).unwrap().auc;
    assert!((auc - pair_auc(&s, &l)).abs() < 1e-9);
    assert!((auc - 0.5).abs() < 0.02, "auc {auc}");
}

#[test]
fn one_class_is_undefined() {
    for l in [vec![true; 5], vec![false; 5]] {
        assert!(matches!(
            roc_auc_eer(&[0.1, 0.5, 0.2, 0.3, 0.9], &l),
            Err(Error::UndefinedMetric(_))
        ));
    }
    assert!(matches!(
        roc_auc_eer(&[], &[]),
        Err(Error::UndefinedMetric(_))
    ));
}

#[test]
fn length_mismatch_and_nan_are_rejected() {
    assert!(roc_auc_eer(&[0.1, 0.2], &[true]).is_err());
    assert!(matches!(
        roc_auc_eer(&[0.1, f64::NAN], &[true, false]),
        Err(Error::UndefinedMetric(_))
    ));
}

#[test]
fn metrics_record_is_one_json_line() {
    let m = Metrics::from_scores(&[0.9, 0.8, 0.3, 0.2], &[true, false, true, false]).unwrap();
    let j = m.to_json();
    assert!(!j.contains('\n'));
    let v: serde_json::Value = serde_json::from_str(&j).unwrap();
    assert_eq!(v["n_frames"], 4);
    assert_eq!(v["auc"], 0.75);
    assert_eq!(
        j,
        Metrics::from_scores(&[0.9, 0.8, 0.3, 0.2], &[true, false, true, false])
            .unwrap()
            .to_json()
    );
}

proptest! {
    #[test]
    fn auc_in_unit_interval_and_flips(
        data in prop::collection::vec((0u8..20, any::<bool>()), 2..200)
    ) {
        let s: Vec<f64> = data.iter().map(|d| f64::from(d.0)).collect();
        let l: Vec<bool> = data.iter().map(|d| d.1).collect();
        prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
        let a = roc_auc_eer(&s, &l).unwrap();
        prop_assert!((0.0..=1.0).contains(&a.auc));
        prop_assert!((0.0..=1.0).contains(&a.eer));
        prop_assert!((a.auc - pair_auc(&s, &l)).abs() < 1e-9);
        // negating the scores mirrors the curve
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let b = roc_auc_eer(&neg, &l).unwrap();
        prop_assert!((a.auc + b.auc - 1.0).abs() < 1e-9);
    }

    #[test]
    fn auc_invariant_to_monotone_maps(
        data in prop::collection::vec((0u8..20, any::<bool>()), 2..200),
        k in 0.1f64..10.0,
        c in -5.0f64..5.0,
    ) {
        let s: Vec<f64> = data.iter().map(|d| f64::from(d.0)).collect();
        let l: Vec<bool> = data.iter().map(|d| d.1).collect();
        prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
        let t: Vec<f64> = s.iter().map(|v| (k * v + c).exp()).collect();
        let a = roc_auc_eer(&s, &l).unwrap();
        let b = roc_auc_eer(&t, &l).unwrap();
        prop_assert!((a.auc - b.auc).abs() < 1e-12);
        prop_assert!((a.eer - b.eer).abs() < 1e-12);
    }
}
