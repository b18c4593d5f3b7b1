//! ASR side of the pipeline: teacher-forced LM training, greedy
//! transcription with word boundaries, and the softmax confidence baseline.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Utterance;
use crate::error::{Error, Result};
use crate::model::{HeadKind, Mode, ModelConfig, ModelParams};
use crate::optim::{adam_step, AdamState, LrSchedule};
use crate::scalar::Scalar;
use crate::tensor::cross_entropy_mean;
use crate::tokenizer::{Tokenizer, BOS, EOS};

/// Shared training knobs for both the ASR and the confidence fine-tune.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainHyperparams {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl TrainHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Parameter {
                name: "hyperparams",
                message: "epochs and batch_size must be positive".into(),
            });
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Parameter {
                name: "lr",
                message: format!("{} must be finite and >= 0", self.lr),
            });
        }
        Ok(())
    }
}

/// One decoded utterance with word boundaries.
///
/// `token_ids` are the emitted tokens including the trailing EOS (when
/// reached); `word_final_indices[k]` is the SPACE/EOS marker that closes
/// word `k`, or the word's last letter when decoding was truncated
/// mid-word.
#[derive(Debug, Clone)]
pub struct Hypothesis<S: Scalar> {
    pub token_ids: Vec<usize>,
    pub token_probs: Vec<S>,
    pub words: Vec<String>,
    pub word_final_indices: Vec<usize>,
    pub truncated: bool,
}

impl<S: Scalar> Hypothesis<S> {
    pub fn text(&self) -> String {
        self.words.join(" ")
    }
}

/// Teacher-forced cross-entropy training of the LM-head model.
///
/// Gradients are accumulated per utterance and averaged per token across
/// each batch; learning rate decays linearly to zero over all steps.
/// Returns the trained parameters and the per-step loss curve.
pub fn train_asr<S: Scalar>(
    corpus: &[Utterance<S>],
    config: &ModelConfig,
    hp: &TrainHyperparams,
    seed: u64,
) -> Result<(ModelParams<S>, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(Error::Parameter {
            name: "corpus",
            message: "training corpus is empty".into(),
        });
    }
    if config.head_kind != HeadKind::Lm {
        return Err(Error::Configuration("train_asr requires the LM head".into()));
    }
    hp.validate()?;
    config.validate()?;

    let tokenizer = Tokenizer::new();
    let mut inputs = Vec::with_capacity(corpus.len());
    let mut targets = Vec::with_capacity(corpus.len());
    for u in corpus {
        let tokens = tokenizer.tokenize(&u.text)?;
        if tokens.len() + 1 > config.max_seq_len {
            return Err(Error::SequenceLength {
                got: tokens.len() + 1,
                max: config.max_seq_len,
            });
        }
        let mut input = Vec::with_capacity(tokens.len() + 1);
        input.push(BOS);
        input.extend_from_slice(&tokens);
        let mut target = tokens;
        target.push(EOS);
        inputs.push(input);
        targets.push(target);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = ModelParams::init(config, &mut rng)?;
    let steps_per_epoch = corpus.len().div_ceil(hp.batch_size);
    let schedule = LrSchedule::new(hp.lr, hp.epochs * steps_per_epoch)?;
    let mut adam = AdamState::new();
    let mut losses = Vec::with_capacity(hp.epochs * steps_per_epoch);
    let mut step = 0usize;

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for _epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hp.batch_size) {
            model.zero_grads();
            let total_tokens: usize = batch.iter().map(|&i| targets[i].len()).sum();
            let mut batch_loss = 0.0f64;
            for &i in batch {
                let features = model.encode(&corpus[i].frames, &mut Mode::Train { rng: &mut rng })?;
                let logits = model.lm_forward(&features, &inputs[i], &mut Mode::Train { rng: &mut rng })?;
                let loss = cross_entropy_mean(&logits, &targets[i])?;
                let weight = targets[i].len() as f64 / total_tokens as f64;
                loss.backward_seeded(S::cast(weight));
                batch_loss += weight * loss.item().as_f64();
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            adam_step(&model.adam_params(), &mut adam, S::cast(schedule.lr(step)))?;
            losses.push(batch_loss);
            step += 1;
        }
    }
    Ok((model, losses))
}

/// Greedy transcription: decodes, derives word boundaries from SPACE/EOS
/// markers, and canonicalizes the hypothesis text as the joined words.
/// Empty decodes are valid hypotheses with zero words.
pub fn transcribe<S: Scalar>(model: &ModelParams<S>, frames: &crate::tensor::Tensor<S>) -> Result<Hypothesis<S>> {
    let tokenizer = Tokenizer::new();
    let features = model.encode(frames, &mut Mode::Eval)?;
    let decoded = model.greedy_decode(&features, model.config().max_seq_len - 1)?;

    let mut words = Vec::new();
    let mut word_final_indices = Vec::new();
    let mut current = String::new();
    for (i, &t) in decoded.token_ids.iter().enumerate() {
        if tokenizer.is_letter(t) {
            current.push(tokenizer.char_for_id(t).expect("letter id"));
            if i + 1 == decoded.token_ids.len() {
                // truncated mid-word: the last letter closes the word
                words.push(std::mem::take(&mut current));
                word_final_indices.push(i);
            }
        } else if tokenizer.is_word_marker(t) && !current.is_empty() {
            words.push(std::mem::take(&mut current));
            word_final_indices.push(i);
        }
        // markers after markers (or a lone EOS) close no word
    }
    Ok(Hypothesis {
        token_ids: decoded.token_ids,
        token_probs: decoded.token_probs,
        words,
        word_final_indices,
        truncated: decoded.truncated,
    })
}

/// Aggregation for the softmax baseline. SUM is deliberately unclamped:
/// downstream metrics rank scores or calibrate them first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftmaxStrategy {
    Min,
    Mean,
    Sum,
    Product,
    Max,
}

impl std::str::FromStr for SoftmaxStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "min" => Ok(Self::Min),
            "mean" => Ok(Self::Mean),
            "sum" => Ok(Self::Sum),
            "product" => Ok(Self::Product),
            "max" => Ok(Self::Max),
            other => Err(Error::Parameter {
                name: "softmax_strategy",
                message: format!("unknown strategy '{other}'"),
            }),
        }
    }
}

/// Word confidences from the ASR's own token probabilities: each word's
/// letter-token probabilities aggregated by `strategy` (MIN is the
/// baseline default). Word-final SPACE/EOS markers are excluded.
pub fn softmax_word_confidence<S: Scalar>(hypothesis: &Hypothesis<S>, strategy: SoftmaxStrategy) -> Result<Vec<S>> {
    softmax_word_confidence_from_tokens(
        &hypothesis.token_ids,
        &hypothesis.token_probs,
        &hypothesis.word_final_indices,
        strategy,
    )
}

/// Token-level form of [`softmax_word_confidence`] for decoded records.
pub fn softmax_word_confidence_from_tokens<S: Scalar>(
    token_ids: &[usize],
    token_probs: &[S],
    word_final_indices: &[usize],
    strategy: SoftmaxStrategy,
) -> Result<Vec<S>> {
    if word_final_indices.is_empty() {
        return Err(Error::Parameter {
            name: "hypothesis",
            message: "needs at least one word".into(),
        });
    }
    if token_ids.len() != token_probs.len() {
        return Err(Error::Internal(format!(
            "{} token ids vs {} probabilities",
            token_ids.len(),
            token_probs.len()
        )));
    }
    let tokenizer = Tokenizer::new();
    let mut scores = Vec::with_capacity(word_final_indices.len());
    let mut start = 0usize;
    for &fin in word_final_indices {
        if fin >= token_ids.len() {
            return Err(Error::Internal(format!(
                "word-final index {fin} outside {} tokens",
                token_ids.len()
            )));
        }
        let letters: Vec<S> = (start..=fin)
            .filter(|&i| tokenizer.is_letter(token_ids[i]))
            .map(|i| token_probs[i])
            .collect();
        if letters.is_empty() {
            return Err(Error::Internal(format!("word ending at {fin} has no letter tokens")));
        }
        let score = match strategy {
            SoftmaxStrategy::Min => letters.iter().copied().fold(S::infinity(), S::min),
            SoftmaxStrategy::Max => letters.iter().copied().fold(S::neg_infinity(), S::max),
            SoftmaxStrategy::Mean => {
                letters.iter().fold(S::zero(), |a, v| a + *v) / S::cast(letters.len() as f64)
            }
            SoftmaxStrategy::Sum => letters.iter().fold(S::zero(), |a, v| a + *v),
            SoftmaxStrategy::Product => letters.iter().fold(S::one(), |a, v| a * *v),
        };
        scores.push(score);
        start = fin + 1;
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_strategies_on_a_two_token_word() {
        // tokens: c a t SPACE  (word "cat" would be 3 letters; use 2 here)
        let ids = [4usize, 5, 3];
        let probs = [0.7f64, 0.9, 0.99];
        let finals = [2usize];
        let min = softmax_word_confidence_from_tokens(&ids, &probs, &finals, SoftmaxStrategy::Min).unwrap();
        assert_eq!(min, vec![0.7]);
        let prod =
            softmax_word_confidence_from_tokens(&ids, &probs, &finals, SoftmaxStrategy::Product).unwrap();
        assert!((prod[0] - 0.63).abs() < 1e-12);
        let sum = softmax_word_confidence_from_tokens(&ids, &probs, &finals, SoftmaxStrategy::Sum).unwrap();
        assert!((sum[0] - 1.6).abs() < 1e-12, "sum stays unclamped");
    }

    #[test]
    fn single_token_word_is_strategy_invariant() {
        let ids = [4usize, 3];
        let probs = [0.4f64, 0.9];
        let finals = [1usize];
        for s in [
            SoftmaxStrategy::Min,
            SoftmaxStrategy::Mean,
            SoftmaxStrategy::Sum,
            SoftmaxStrategy::Product,
            SoftmaxStrategy::Max,
        ] {
            let v = softmax_word_confidence_from_tokens(&ids, &probs, &finals, s).unwrap();
            assert_eq!(v, vec![0.4]);
        }
    }

    #[test]
    fn baseline_ordering_invariants_hold() {
        // MIN <= MEAN <= MAX and PRODUCT <= MIN for probabilities
        let ids = [4usize, 5, 6, 3, 7, 8, 2];
        let probs = [0.6f64, 0.9, 0.75, 0.95, 0.5, 0.8, 0.9];
        let finals = [3usize, 6];
        let get = |s| softmax_word_confidence_from_tokens(&ids, &probs, &finals, s).unwrap();
        let (min, mean, max, prod) = (
            get(SoftmaxStrategy::Min),
            get(SoftmaxStrategy::Mean),
            get(SoftmaxStrategy::Max),
            get(SoftmaxStrategy::Product),
        );
        for k in 0..2 {
            assert!(min[k] <= mean[k] && mean[k] <= max[k]);
            assert!(prod[k] <= min[k]);
        }
    }

    #[test]
    fn empty_hypothesis_is_rejected_by_baseline() {
        let err =
            softmax_word_confidence_from_tokens::<f64>(&[2], &[0.9], &[], SoftmaxStrategy::Min).unwrap_err();
        assert!(err.to_string().contains("at least one word"));
    }
}
