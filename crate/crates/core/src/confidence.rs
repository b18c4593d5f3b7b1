//! Confidence-head fine-tuning on alignment-derived labels, and word
//! scoring with a trained confidence model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{aggregate_token_confidence, AggregationStrategy};
use crate::model::{convert_to_confidence_model, DecoderMask, Mode, ModelParams};
use crate::optim::{adam_step, AdamState, LrSchedule};
use crate::scalar::Scalar;
use crate::tensor::{bce_loss, Tensor};

pub use crate::asr::TrainHyperparams;

/// Which token positions carry the BCE loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossPositions {
    /// Only each word's final token (the default): the marker carries the
    /// word decision.
    WordFinal,
    /// Every token of every word span, for comparison runs.
    AllTokens,
}

impl std::str::FromStr for LossPositions {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "word_final" => Ok(Self::WordFinal),
            "all_tokens" => Ok(Self::AllTokens),
            other => Err(Error::Parameter {
                name: "loss_positions",
                message: format!("unknown loss positions '{other}'"),
            }),
        }
    }
}

/// One training utterance: audio, the hypothesis fed back to the decoder,
/// and per-word binary labels at the word-final indices.
#[derive(Debug, Clone)]
pub struct ConfTrainItem<S: Scalar> {
    pub frames: Tensor<S>,
    pub tokens: Vec<usize>,
    pub word_final_indices: Vec<usize>,
    pub labels: Vec<bool>,
}

fn targets_and_mask<S: Scalar>(item: &ConfTrainItem<S>, positions: LossPositions) -> (Vec<S>, Vec<S>, usize) {
    let n = item.tokens.len();
    let mut target = vec![S::zero(); n];
    let mut mask = vec![S::zero(); n];
    let mut start = 0usize;
    for (w, &fin) in item.word_final_indices.iter().enumerate() {
        let label = if item.labels[w] { S::one() } else { S::zero() };
        match positions {
            LossPositions::WordFinal => {
                target[fin] = label;
                mask[fin] = S::one();
            }
            LossPositions::AllTokens => {
                for i in start..=fin {
                    target[i] = label;
                    mask[i] = S::one();
                }
            }
        }
        start = fin + 1;
    }
    let count = mask.iter().filter(|&&m| m == S::one()).count();
    (target, mask, count)
}

/// Fine-tunes a confidence model from ASR parameters: head replacement,
/// BCE on word-level labels, gradients averaged per word across each
/// batch, linear learning-rate decay.
///
/// With `freeze_encoder` the encoder runs in eval mode (no dropout) and
/// its parameters are excluded from updates, so they stay bit-identical.
pub fn train_confidence<S: Scalar>(
    asr_params: &ModelParams<S>,
    items: &[ConfTrainItem<S>],
    mask: DecoderMask,
    freeze_encoder: bool,
    hp: &TrainHyperparams,
    loss_positions: LossPositions,
    seed: u64,
) -> Result<(ModelParams<S>, Vec<f64>)> {
    hp.validate()?;
    let model = convert_to_confidence_model(asr_params, mask, freeze_encoder)?;
    let max_seq = model.config().max_seq_len;
    let usable: Vec<&ConfTrainItem<S>> = items
        .iter()
        .filter(|item| !item.word_final_indices.is_empty())
        .collect();
    if usable.is_empty() {
        return Err(Error::Parameter {
            name: "items",
            message: "no utterances with at least one word".into(),
        });
    }
    for item in &usable {
        if item.labels.len() != item.word_final_indices.len() {
            return Err(Error::Internal(format!(
                "{} labels for {} words",
                item.labels.len(),
                item.word_final_indices.len()
            )));
        }
        if item.tokens.is_empty() || item.tokens.len() > max_seq {
            return Err(Error::SequenceLength {
                got: item.tokens.len(),
                max: max_seq,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps_per_epoch = usable.len().div_ceil(hp.batch_size);
    let schedule = LrSchedule::new(hp.lr, hp.epochs * steps_per_epoch)?;
    let mut adam = AdamState::new();
    let mut losses = Vec::with_capacity(hp.epochs * steps_per_epoch);
    let mut step = 0usize;

    let mut order: Vec<usize> = (0..usable.len()).collect();
    for _epoch in 0..hp.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for batch in order.chunks(hp.batch_size) {
            model.zero_grads();
            let prepared: Vec<(Vec<S>, Vec<S>, usize)> = batch
                .iter()
                .map(|&i| targets_and_mask(usable[i], loss_positions))
                .collect();
            let total: usize = prepared.iter().map(|(_, _, c)| c).sum();
            let mut batch_loss = 0.0f64;
            for (&i, (target, mask_vec, count)) in batch.iter().zip(&prepared) {
                let item = usable[i];
                let features = if freeze_encoder {
                    model.encode(&item.frames, &mut Mode::Eval)?
                } else {
                    model.encode(&item.frames, &mut Mode::Train { rng: &mut rng })?
                };
                let pred = model.confidence_forward(&features, &item.tokens, &mut Mode::Train { rng: &mut rng })?;
                let target_t = Tensor::from_vec(&[item.tokens.len()], target.clone())?;
                let mask_t = Tensor::from_vec(&[item.tokens.len()], mask_vec.clone())?;
                let loss = bce_loss(&pred, &target_t, &mask_t)?;
                let weight = *count as f64 / total as f64;
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

/// Per-word confidence scores from a trained model: encode, one
/// non-autoregressive confidence pass, then token-to-word aggregation
/// (LAST by default).
pub fn score_words<S: Scalar>(
    model: &ModelParams<S>,
    frames: &Tensor<S>,
    tokens: &[usize],
    word_final_indices: &[usize],
    aggregation: AggregationStrategy,
) -> Result<Vec<S>> {
    let features = model.encode(frames, &mut Mode::Eval)?;
    let probs = model.confidence_forward(&features, tokens, &mut Mode::Eval)?;
    aggregate_token_confidence(&probs.to_vec(), word_final_indices, aggregation)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_construction_word_final_vs_all_tokens() {
        let item = ConfTrainItem::<f64> {
            frames: Tensor::zeros(&[2, 4]),
            tokens: vec![4, 5, 3, 6, 2],
            word_final_indices: vec![2, 4],
            labels: vec![true, false],
        };
        let (t, m, c) = targets_and_mask(&item, LossPositions::WordFinal);
        assert_eq!(m, vec![0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(t[2], 1.0);
        assert_eq!(t[4], 0.0);
        assert_eq!(c, 2);

        let (t, m, c) = targets_and_mask(&item, LossPositions::AllTokens);
        assert_eq!(m, vec![1.0; 5]);
        assert_eq!(t, vec![1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(c, 5);
    }
}
