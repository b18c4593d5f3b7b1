//! Reference-hypothesis word alignment, binary correctness labels, and
//! token-to-word confidence aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One edit operation over word indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match { ref_idx: usize, hyp_idx: usize },
    Substitute { ref_idx: usize, hyp_idx: usize },
    Insert { hyp_idx: usize },
    Delete { ref_idx: usize },
}

/// Substitution / insertion / deletion / match totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub matches: usize,
}

impl EditCounts {
    pub fn edits(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    pub fn reference_words(&self) -> usize {
        self.matches + self.substitutions + self.deletions
    }
}

/// A Levenshtein-optimal monotone alignment of two word sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub ops: Vec<EditOp>,
}

impl Alignment {
    pub fn cost(&self) -> usize {
        self.counts().edits()
    }

    pub fn counts(&self) -> EditCounts {
        let mut c = EditCounts::default();
        for op in &self.ops {
            match op {
                EditOp::Match { .. } => c.matches += 1,
                EditOp::Substitute { .. } => c.substitutions += 1,
                EditOp::Insert { .. } => c.insertions += 1,
                EditOp::Delete { .. } => c.deletions += 1,
            }
        }
        c
    }
}

/// Minimum-edit alignment with unit costs and deterministic tie-breaking.
///
/// Ties are resolved while walking the optimal-cost lattice from the front,
/// preferring MATCH/SUBSTITUTE over DELETE over INSERT; this makes labels
/// reproducible when several optimal alignments exist.
pub fn align<T: AsRef<str>>(ref_words: &[T], hyp_words: &[T]) -> Alignment {
    let m = ref_words.len();
    let n = hyp_words.len();
    // suffix[i][j] = edit distance between ref[i..] and hyp[j..]
    let mut suffix = vec![vec![0usize; n + 1]; m + 1];
    for i in 0..=m {
        suffix[i][n] = m - i;
    }
    for j in 0..=n {
        suffix[m][j] = n - j;
    }
    for i in (0..m).rev() {
        for j in (0..n).rev() {
            let same = ref_words[i].as_ref() == hyp_words[j].as_ref();
            let diag = suffix[i + 1][j + 1] + usize::from(!same);
            let del = suffix[i + 1][j] + 1;
            let ins = suffix[i][j + 1] + 1;
            suffix[i][j] = diag.min(del).min(ins);
        }
    }
    let mut ops = Vec::with_capacity(m.max(n));
    let (mut i, mut j) = (0usize, 0usize);
    while i < m || j < n {
        let here = suffix[i][j];
        if i < m && j < n {
            let same = ref_words[i].as_ref() == hyp_words[j].as_ref();
            if suffix[i + 1][j + 1] + usize::from(!same) == here {
                ops.push(if same {
                    EditOp::Match { ref_idx: i, hyp_idx: j }
                } else {
                    EditOp::Substitute { ref_idx: i, hyp_idx: j }
                });
                i += 1;
                j += 1;
                continue;
            }
        }
        if i < m && suffix[i + 1][j] + 1 == here {
            ops.push(EditOp::Delete { ref_idx: i });
            i += 1;
        } else {
            ops.push(EditOp::Insert { hyp_idx: j });
            j += 1;
        }
    }
    Alignment { ops }
}

/// Hypothesis words with alignment-derived binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledHypothesis {
    pub words: Vec<String>,
    /// One entry per hypothesis word; true when the word is a MATCH.
    pub labels: Vec<bool>,
    pub deletions: usize,
    /// Filled by a score source later (confidence head or softmax baseline).
    pub word_confidences: Option<Vec<f64>>,
}

/// Labels every hypothesis word from an alignment: MATCH -> correct,
/// SUBSTITUTE/INSERT -> incorrect; DELETE only increments the deletion
/// count.
pub fn label_words<T: AsRef<str>>(alignment: &Alignment, hyp_words: &[T]) -> Result<LabeledHypothesis> {
    let mut labels = vec![false; hyp_words.len()];
    let mut covered = vec![false; hyp_words.len()];
    let mut deletions = 0usize;
    let mut expected_next = 0usize;
    for op in &alignment.ops {
        match *op {
            EditOp::Match { hyp_idx, .. } | EditOp::Substitute { hyp_idx, .. } | EditOp::Insert { hyp_idx } => {
                if hyp_idx >= hyp_words.len() || covered[hyp_idx] || hyp_idx != expected_next {
                    return Err(Error::Internal(format!(
                        "alignment does not cover hypothesis words in order at index {hyp_idx}"
                    )));
                }
                covered[hyp_idx] = true;
                expected_next += 1;
                labels[hyp_idx] = matches!(op, EditOp::Match { .. });
            }
            EditOp::Delete { .. } => deletions += 1,
        }
    }
    if expected_next != hyp_words.len() {
        return Err(Error::Internal(format!(
            "alignment covers {expected_next} of {} hypothesis words",
            hyp_words.len()
        )));
    }
    Ok(LabeledHypothesis {
        words: hyp_words.iter().map(|w| w.as_ref().to_string()).collect(),
        labels,
        deletions,
        word_confidences: None,
    })
}

/// How token confidences combine into one score per word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationStrategy {
    /// Confidence at the word-final token (the default).
    Last,
    Min,
    Mean,
    Product,
    Max,
}

impl std::str::FromStr for AggregationStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "last" => Ok(Self::Last),
            "min" => Ok(Self::Min),
            "mean" => Ok(Self::Mean),
            "product" => Ok(Self::Product),
            "max" => Ok(Self::Max),
            other => Err(Error::Parameter {
                name: "aggregation",
                message: format!("unknown strategy '{other}'"),
            }),
        }
    }
}

/// Reduces per-token confidences to per-word confidences.
///
/// `word_final_indices` must be strictly increasing and in range; word `k`
/// spans tokens `(prev_final, final_k]`, so the word-final token itself is
/// part of the span and LAST simply reads it.
pub fn aggregate_token_confidence<S: Scalar>(
    token_confidences: &[S],
    word_final_indices: &[usize],
    strategy: AggregationStrategy,
) -> Result<Vec<S>> {
    let mut prev: Option<usize> = None;
    for &idx in word_final_indices {
        if idx >= token_confidences.len() || prev.is_some_and(|p| idx <= p) {
            return Err(Error::Parameter {
                name: "word_final_indices",
                message: format!("indices must be strictly increasing and within {} tokens", token_confidences.len()),
            });
        }
        prev = Some(idx);
    }
    let mut out = Vec::with_capacity(word_final_indices.len());
    let mut start = 0usize;
    for &fin in word_final_indices {
        let span = &token_confidences[start..=fin];
        if span.is_empty() {
            return Err(Error::Internal("empty word span".into()));
        }
        let score = match strategy {
            AggregationStrategy::Last => token_confidences[fin],
            AggregationStrategy::Min => span.iter().copied().fold(S::infinity(), S::min),
            AggregationStrategy::Max => span.iter().copied().fold(S::neg_infinity(), S::max),
            AggregationStrategy::Mean => {
                span.iter().fold(S::zero(), |a, v| a + *v) / S::cast(span.len() as f64)
            }
            AggregationStrategy::Product => span.iter().fold(S::one(), |a, v| a * *v),
        };
        out.push(score);
        start = fin + 1;
    }
    Ok(out)
}
