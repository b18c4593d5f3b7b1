//! Independent oracles for the alignment module: a distance-only DP and an
//! exhaustive enumeration of all monotone alignments.

use cwl_core::labeling::{align, label_words};
use cwl_core::metrics;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Classical Levenshtein distance, returning only the distance. Keeps no
/// backtrace and shares nothing with the implementation under test.
fn levenshtein_distance(a: &[String], b: &[String]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        curr[0] = i;
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            curr[j] = (prev[j] + 1).min(curr[j - 1] + 1).min(prev[j - 1] + cost);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Minimum cost over every monotone alignment, by direct recursion.
fn exhaustive_min_cost(r: &[String], h: &[String]) -> usize {
    if r.is_empty() {
        return h.len();
    }
    if h.is_empty() {
        return r.len();
    }
    let diag = exhaustive_min_cost(&r[1..], &h[1..]) + usize::from(r[0] != h[0]);
    let del = exhaustive_min_cost(&r[1..], h) + 1;
    let ins = exhaustive_min_cost(r, &h[1..]) + 1;
    diag.min(del).min(ins)
}

fn random_words(rng: &mut ChaCha8Rng, max_len: usize, vocab: usize) -> Vec<String> {
    let len = rng.random_range(0..=max_len);
    (0..len).map(|_| format!("w{}", rng.random_range(0..vocab))).collect()
}

#[test]
fn alignment_cost_equals_levenshtein_on_500_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..500 {
        // small vocab forces collisions and tie-rich lattices
        let r = random_words(&mut rng, 10, 5);
        let h = random_words(&mut rng, 10, 5);
        let a = align(&r, &h);
        let expected = levenshtein_distance(&r, &h);
        assert_eq!(a.cost(), expected, "case {case}: {r:?} vs {h:?}");
        // counts stay mutually consistent
        let c = a.counts();
        assert_eq!(c.reference_words(), r.len());
        assert_eq!(c.matches + c.substitutions + c.insertions, h.len());
    }
}

#[test]
fn alignment_cost_equals_exhaustive_minimum_for_short_sequences() {
    // every pair of sequences of length <= 4 over a 2-word vocabulary
    let vocab = ["a".to_string(), "b".to_string()];
    let mut sequences: Vec<Vec<String>> = vec![vec![]];
    for len in 1..=4usize {
        let count = 2usize.pow(len as u32);
        for code in 0..count {
            let seq: Vec<String> = (0..len).map(|k| vocab[(code >> k) & 1].clone()).collect();
            sequences.push(seq);
        }
    }
    assert_eq!(sequences.len(), 31);
    for r in &sequences {
        for h in &sequences {
            let got = align(r, h).cost();
            let expected = exhaustive_min_cost(r, h);
            assert_eq!(got, expected, "{r:?} vs {h:?}");
        }
    }
}

#[test]
fn alignment_counts_are_the_wer_numerator() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    for _ in 0..200 {
        let mut r = random_words(&mut rng, 8, 4);
        if r.is_empty() {
            r.push("w0".to_string());
        }
        let h = random_words(&mut rng, 8, 4);
        let a = align(&r, &h);
        let via_metrics = metrics::wer(std::slice::from_ref(&a)).unwrap();
        let direct = levenshtein_distance(&r, &h) as f64 / r.len() as f64;
        assert_eq!(via_metrics, direct);
    }
}

#[test]
fn labels_are_deterministic_across_reruns() {
    let mut rng = ChaCha8Rng::seed_from_u64(79);
    for _ in 0..100 {
        let r = random_words(&mut rng, 6, 3);
        let h = random_words(&mut rng, 6, 3);
        let a1 = align(&r, &h);
        let a2 = align(&r, &h);
        assert_eq!(a1, a2);
        let l1 = label_words(&a1, &h).unwrap();
        let l2 = label_words(&a2, &h).unwrap();
        assert_eq!(l1.labels, l2.labels);
        assert_eq!(l1.labels.len(), h.len());
    }
}
