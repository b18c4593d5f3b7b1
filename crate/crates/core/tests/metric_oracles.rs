//! Brute-force oracles for the ranking metrics, plus property tests of
//! their algebraic invariants.

use cwl_core::metrics::{auc_pr, auc_roc, fit_calibrator, nce, PrPolarity};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exhaustive pairwise-comparison AUC: wins + half-credit ties over all
/// (positive, negative) pairs.
fn auc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    let mut credit = 0.0;
    for &p in &pos {
        for &q in &neg {
            if p > q {
                credit += 1.0;
            } else if p == q {
                credit += 0.5;
            }
        }
    }
    credit / (pos.len() as f64 * neg.len() as f64)
}

/// Brute-force precision-recall curve: precision and recall recomputed
/// from scratch at every distinct threshold, area in average-precision
/// form.
fn ap_bruteforce(scores: &[f64], positives: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let total_pos = positives.iter().filter(|&&p| p).count() as f64;
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for &t in &thresholds {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (&s, &p) in scores.iter().zip(positives) {
            if s >= t {
                if p {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let recall = tp as f64 / total_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    area
}

/// Random instance with ties (scores on a coarse grid) and both classes.
fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    loop {
        let n = rng.random_range(2..=12);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..=10) as f64 / 10.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        let pos = labels.iter().filter(|&&l| l).count();
        if pos > 0 && pos < n {
            return (scores, labels);
        }
    }
}

#[test]
fn auc_roc_matches_the_pairwise_oracle_exactly_on_200_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    for case in 0..200 {
        let (scores, labels) = random_instance(&mut rng);
        let got = auc_roc(&scores, &labels).unwrap();
        let expected = auc_pairwise(&scores, &labels);
        assert_eq!(got, expected, "case {case}: {scores:?} {labels:?}");
    }
}

#[test]
fn auc_pr_matches_the_bruteforce_curve_on_200_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(4343);
    for case in 0..200 {
        let (scores, labels) = random_instance(&mut rng);
        let got = auc_pr(&scores, &labels, PrPolarity::Pos).unwrap();
        let expected = ap_bruteforce(&scores, &labels);
        assert!((got - expected).abs() < 1e-12, "case {case} POS: {got} vs {expected}");

        let neg_scores: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
        let neg_positives: Vec<bool> = labels.iter().map(|l| !l).collect();
        let got = auc_pr(&scores, &labels, PrPolarity::Neg).unwrap();
        let expected = ap_bruteforce(&neg_scores, &neg_positives);
        assert!((got - expected).abs() < 1e-12, "case {case} NEG: {got} vs {expected}");
    }
}

#[test]
fn worked_fixtures_rederive_through_the_oracles() {
    // the same fixtures the implementation tests assert, re-derived here
    // through the independent oracles
    let scores = [0.9, 0.8, 0.7, 0.2];
    let labels = [true, false, true, false];
    assert_eq!(auc_pairwise(&scores, &labels), 0.75);
    assert_eq!(auc_roc(&scores, &labels).unwrap(), 0.75);

    let scores = [0.9, 0.8, 0.2];
    let labels = [true, false, true];
    let ap = ap_bruteforce(&scores, &labels);
    assert!((ap - 5.0 / 6.0).abs() < 1e-12);
    assert!((auc_pr(&scores, &labels, PrPolarity::Pos).unwrap() - ap).abs() < 1e-12);
}

#[test]
fn nce_of_calibrated_constant_predictor_is_zero_on_balanced_data() {
    // with an equal split, the Laplace-smoothed bin value (c+1)/(n+2)
    // equals the class prior exactly, so calibrated NCE collapses to zero
    for n_half in [1usize, 3, 10, 50] {
        let scores: Vec<f64> = vec![0.4; 2 * n_half];
        let labels: Vec<bool> = (0..2 * n_half).map(|i| i % 2 == 0).collect();
        let cal = fit_calibrator(&scores, &labels, 20).unwrap();
        let calibrated = cal.calibrate(&scores);
        let v = nce(&calibrated, &labels).unwrap();
        assert!(v.abs() < 1e-12, "n = {}: nce {v}", 2 * n_half);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn auc_roc_is_invariant_under_strictly_increasing_transforms(
        raw in prop::collection::vec((0u8..=20, any::<bool>()), 2..24)
    ) {
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 20.0).collect();
        let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
        let pos = labels.iter().filter(|&&l| l).count();
        prop_assume!(pos > 0 && pos < labels.len());
        let base = auc_roc(&scores, &labels).unwrap();
        // x -> exp(3x) + x is strictly increasing and preserves ties
        let transformed: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp() + s).collect();
        let mapped = auc_roc(&transformed, &labels).unwrap();
        prop_assert!((base - mapped).abs() < 1e-12);
    }

    #[test]
    fn auc_roc_complement_rule_without_ties(perm in prop::collection::vec(0usize..100, 3..16), flips in any::<u64>()) {
        // distinct scores from distinct ranks
        let mut scores: Vec<f64> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for &p in &perm {
            if seen.insert(p) {
                scores.push(p as f64 / 100.0);
            }
        }
        prop_assume!(scores.len() >= 3);
        let labels: Vec<bool> = (0..scores.len()).map(|i| (flips >> (i % 64)) & 1 == 1).collect();
        let pos = labels.iter().filter(|&&l| l).count();
        prop_assume!(pos > 0 && pos < labels.len());
        let a = auc_roc(&scores, &labels).unwrap();
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let b = auc_roc(&scores, &flipped).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn calibrated_scores_stay_in_open_unit_interval(
        raw in prop::collection::vec((0u8..=20, any::<bool>()), 1..40),
        n_bins in 1usize..30
    ) {
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 20.0).collect();
        let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
        let cal = fit_calibrator(&scores, &labels, n_bins).unwrap();
        for v in cal.calibrate(&scores) {
            prop_assert!(v > 0.0 && v < 1.0);
        }
    }
}
