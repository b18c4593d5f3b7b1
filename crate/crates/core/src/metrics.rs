//! Calibration and evaluation metrics: histogram binning, NCE, AUC-ROC,
//! AUC-PR in both polarities, and WER.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::Alignment;
use crate::scalar::Scalar;

fn check_finite<S: Scalar>(scores: &[S], metric: &'static str) -> Result<()> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::UndefinedMetric {
            metric,
            message: "non-finite score".into(),
        });
    }
    Ok(())
}

fn check_lengths<S: Scalar>(scores: &[S], labels: &[bool], metric: &'static str) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::UndefinedMetric {
            metric,
            message: format!("{} scores vs {} labels", scores.len(), labels.len()),
        });
    }
    Ok(())
}

/// Equal-width histogram-binning calibrator over `[0, 1]` with Laplace
/// smoothing: each bin maps to `(correct + 1) / (count + 2)`.
///
/// Raw scores outside `[0, 1]` (e.g. the SUM softmax strategy) are min-max
/// normalized with parameters learned at fit time; empty bins fall back to
/// the globally smoothed accuracy.
#[derive(Debug, Clone)]
pub struct BinningCalibrator<S: Scalar> {
    n_bins: usize,
    counts: Vec<usize>,
    corrects: Vec<usize>,
    values: Vec<S>,
    global: S,
    norm: Option<(S, S)>,
}

/// One row of the calibration table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub correct: usize,
    pub value: f64,
}

pub fn fit_calibrator<S: Scalar>(scores: &[S], labels: &[bool], n_bins: usize) -> Result<BinningCalibrator<S>> {
    if scores.is_empty() {
        return Err(Error::Parameter {
            name: "calibrator_scores",
            message: "empty input".into(),
        });
    }
    if n_bins == 0 {
        return Err(Error::Parameter {
            name: "n_bins",
            message: "must be at least 1".into(),
        });
    }
    check_lengths(scores, labels, "calibration")?;
    check_finite(scores, "calibration")?;

    let out_of_range = scores.iter().any(|&s| s < S::zero() || s > S::one());
    let norm = if out_of_range {
        let min = scores.iter().copied().fold(S::infinity(), S::min);
        let max = scores.iter().copied().fold(S::neg_infinity(), S::max);
        Some((min, max - min))
    } else {
        None
    };

    let mut cal = BinningCalibrator {
        n_bins,
        counts: vec![0; n_bins],
        corrects: vec![0; n_bins],
        values: vec![S::zero(); n_bins],
        global: S::zero(),
        norm,
    };
    for (&s, &l) in scores.iter().zip(labels) {
        let b = cal.bin_index(s);
        cal.counts[b] += 1;
        cal.corrects[b] += usize::from(l);
    }
    let total: usize = cal.counts.iter().sum();
    let correct: usize = cal.corrects.iter().sum();
    cal.global = S::cast((correct + 1) as f64 / (total + 2) as f64);
    for b in 0..n_bins {
        cal.values[b] = if cal.counts[b] == 0 {
            cal.global
        } else {
            S::cast((cal.corrects[b] + 1) as f64 / (cal.counts[b] + 2) as f64)
        };
    }
    Ok(cal)
}

impl<S: Scalar> BinningCalibrator<S> {
    fn normalized(&self, s: S) -> S {
        match self.norm {
            None => s,
            Some((min, span)) => {
                if span == S::zero() {
                    S::cast(0.5)
                } else {
                    ((s - min) / span).max(S::zero()).min(S::one())
                }
            }
        }
    }

    fn bin_index(&self, s: S) -> usize {
        let s = self.normalized(s);
        let idx = (s * S::cast(self.n_bins as f64)).floor().as_f64() as usize;
        idx.min(self.n_bins - 1)
    }

    /// Replaces each score by its bin's smoothed empirical accuracy.
    pub fn calibrate(&self, scores: &[S]) -> Vec<S> {
        scores.iter().map(|&s| self.values[self.bin_index(s)]).collect()
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn bin_table(&self) -> Vec<CalibrationBin> {
        (0..self.n_bins)
            .map(|b| CalibrationBin {
                lo: b as f64 / self.n_bins as f64,
                hi: (b + 1) as f64 / self.n_bins as f64,
                count: self.counts[b],
                correct: self.corrects[b],
                value: self.values[b].as_f64(),
            })
            .collect()
    }
}

/// Normalized cross entropy of confidence scores against binary labels.
///
/// `NCE = (H_max - H_conf) / H_max` with
/// `H_max = -[n_c ln p_c + n_i ln(1 - p_c)]`, `p_c = n_c/n`, and
/// `H_conf = -Σ_correct ln c_i - Σ_incorrect ln(1 - c_i)`.
/// Scores must lie strictly inside (0, 1); single-class inputs have
/// `H_max = 0` and are undefined.
pub fn nce<S: Scalar>(scores: &[S], labels: &[bool]) -> Result<S> {
    check_lengths(scores, labels, "nce")?;
    check_finite(scores, "nce")?;
    if scores.iter().any(|&s| s <= S::zero() || s >= S::one()) {
        return Err(Error::UndefinedMetric {
            metric: "nce",
            message: "scores must be strictly inside (0, 1)".into(),
        });
    }
    let n = labels.len();
    let n_correct = labels.iter().filter(|&&l| l).count();
    if n == 0 || n_correct == 0 || n_correct == n {
        return Err(Error::UndefinedMetric {
            metric: "nce",
            message: "needs both correct and incorrect words".into(),
        });
    }
    let p_c = S::cast(n_correct as f64 / n as f64);
    let h_max = -(S::cast(n_correct as f64) * p_c.ln()
        + S::cast((n - n_correct) as f64) * (S::one() - p_c).ln());
    let mut h_conf = S::zero();
    for (&s, &l) in scores.iter().zip(labels) {
        h_conf -= if l { s.ln() } else { (S::one() - s).ln() };
    }
    Ok((h_max - h_conf) / h_max)
}

/// Area under the ROC curve via the Mann-Whitney statistic: the fraction
/// of (positive, negative) pairs ranked correctly, ties credited 0.5.
pub fn auc_roc<S: Scalar>(scores: &[S], labels: &[bool]) -> Result<S> {
    check_lengths(scores, labels, "auc_roc")?;
    check_finite(scores, "auc_roc")?;
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric {
            metric: "auc_roc",
            message: "needs both classes".into(),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    // average ranks over tie groups (1-based)
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0usize;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let p = n_pos as f64;
    let q = n_neg as f64;
    Ok(S::cast((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q)))
}

/// Which class counts as "positive" for precision-recall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrPolarity {
    /// Correct words are positives, scored by confidence.
    Pos,
    /// Errors are positives, scored by `1 - confidence`.
    Neg,
}

/// Area under the precision-recall curve in average-precision form:
/// `Σ (R_k - R_{k-1}) · P_k` over descending score thresholds, with tied
/// scores processed as one group.
pub fn auc_pr<S: Scalar>(scores: &[S], labels: &[bool], polarity: PrPolarity) -> Result<S> {
    check_lengths(scores, labels, "auc_pr")?;
    check_finite(scores, "auc_pr")?;
    let (scores, positives): (Vec<S>, Vec<bool>) = match polarity {
        PrPolarity::Pos => (scores.to_vec(), labels.to_vec()),
        PrPolarity::Neg => (
            scores.iter().map(|&s| S::one() - s).collect(),
            labels.iter().map(|&l| !l).collect(),
        ),
    };
    let total_pos = positives.iter().filter(|&&p| p).count();
    if total_pos == 0 {
        return Err(Error::UndefinedMetric {
            metric: "auc_pr",
            message: "no positives under the chosen polarity".into(),
        });
    }
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut ap = 0.0f64;
    let mut i = 0usize;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mut group_tp = 0usize;
        for &idx in &order[i..=j] {
            if positives[idx] {
                group_tp += 1;
            }
        }
        let group_fp = j - i + 1 - group_tp;
        tp += group_tp;
        fp += group_fp;
        if group_tp > 0 {
            let precision = tp as f64 / (tp + fp) as f64;
            let delta_recall = group_tp as f64 / total_pos as f64;
            ap += delta_recall * precision;
        }
        i = j + 1;
    }
    Ok(S::cast(ap))
}

/// Corpus WER pooled over alignments: `(subs + ins + dels) / reference words`.
pub fn wer(alignments: &[Alignment]) -> Result<f64> {
    let mut edits = 0usize;
    let mut reference = 0usize;
    for a in alignments {
        let c = a.counts();
        edits += c.edits();
        reference += c.reference_words();
    }
    wer_from_totals(edits, reference)
}

pub fn wer_from_totals(edits: usize, reference_words: usize) -> Result<f64> {
    if reference_words == 0 {
        return Err(Error::UndefinedMetric {
            metric: "wer",
            message: "zero reference words".into(),
        });
    }
    Ok(edits as f64 / reference_words as f64)
}

/// Per-utterance inputs to [`evaluate`]: one confidence score and one
/// correctness label per hypothesis word, plus the utterance's reference
/// word and deletion counts for WER.
#[derive(Debug, Clone)]
pub struct ScoredUtterance<S: Scalar> {
    pub scores: Vec<S>,
    pub labels: Vec<bool>,
    pub reference_words: usize,
    pub deletions: usize,
}

/// Full metric report for one (score source, dataset) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub source: String,
    pub n_utterances: usize,
    pub n_words: usize,
    pub n_correct: usize,
    pub reference_words: usize,
    pub edits: usize,
    pub wer: f64,
    pub nce: f64,
    pub auc_roc: f64,
    pub auc_pr_pos: f64,
    pub auc_pr_neg: f64,
    pub n_bins: usize,
    pub calibration: Vec<CalibrationBin>,
}

/// Pools words across utterances, fits the calibrator, and computes every
/// metric. AUCs run on raw scores; NCE runs on calibrated scores, matching
/// the reporting convention.
pub fn evaluate<S: Scalar>(utterances: &[ScoredUtterance<S>], n_bins: usize, source: &str) -> Result<EvalReport> {
    let mut scores: Vec<S> = Vec::new();
    let mut labels: Vec<bool> = Vec::new();
    let mut reference_words = 0usize;
    let mut edits = 0usize;
    for u in utterances {
        if u.scores.len() != u.labels.len() {
            return Err(Error::Internal(format!(
                "{} scores for {} labels in one utterance",
                u.scores.len(),
                u.labels.len()
            )));
        }
        scores.extend_from_slice(&u.scores);
        labels.extend_from_slice(&u.labels);
        reference_words += u.reference_words;
        edits += u.labels.iter().filter(|&&l| !l).count() + u.deletions;
    }
    if scores.is_empty() {
        return Err(Error::Parameter {
            name: "evaluate",
            message: "no scored words".into(),
        });
    }
    let calibrator = fit_calibrator(&scores, &labels, n_bins)?;
    let calibrated = calibrator.calibrate(&scores);
    let n_correct = labels.iter().filter(|&&l| l).count();
    Ok(EvalReport {
        source: source.to_string(),
        n_utterances: utterances.len(),
        n_words: scores.len(),
        n_correct,
        reference_words,
        edits,
        wer: wer_from_totals(edits, reference_words)?,
        nce: nce(&calibrated, &labels)?.as_f64(),
        auc_roc: auc_roc(&scores, &labels)?.as_f64(),
        auc_pr_pos: auc_pr(&scores, &labels, PrPolarity::Pos)?.as_f64(),
        auc_pr_neg: auc_pr(&scores, &labels, PrPolarity::Neg)?.as_f64(),
        n_bins,
        calibration: calibrator.bin_table(),
    })
}

/// Aligned metric-by-source table for stdout, one column per report.
pub fn format_report_table(reports: &[&EvalReport]) -> String {
    let rows: [(&str, fn(&EvalReport) -> f64); 5] = [
        ("NCE", |r| r.nce),
        ("AUC-ROC", |r| r.auc_roc),
        ("AUC-PR_pos", |r| r.auc_pr_pos),
        ("AUC-PR_neg", |r| r.auc_pr_neg),
        ("WER", |r| r.wer),
    ];
    let name_w = 12usize;
    let col_w = reports
        .iter()
        .map(|r| r.source.len().max(8) + 2)
        .collect::<Vec<_>>();
    let mut out = String::new();
    out.push_str(&format!("{:<name_w$}", "Metric"));
    for (r, w) in reports.iter().zip(&col_w) {
        out.push_str(&format!("{:>w$}", r.source, w = w));
    }
    out.push('\n');
    for (name, get) in rows {
        out.push_str(&format!("{name:<name_w$}"));
        for (r, w) in reports.iter().zip(&col_w) {
            out.push_str(&format!("{:>w$.4}", get(r), w = w));
        }
        out.push('\n');
    }
    out
}
