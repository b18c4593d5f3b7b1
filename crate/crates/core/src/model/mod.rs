//! Toy encoder-decoder transformer with two interchangeable heads: a
//! next-token LM head for ASR decoding and a scalar confidence head that
//! scores every token of a hypothesis in one non-autoregressive pass.
//!
//! Blocks are pre-layer-norm; positional embeddings are learned; the
//! decoder self-attention mask is causal for the LM head and switchable
//! for the confidence head.

pub mod checkpoint;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::AdamParam;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tokenizer::{BOS, EOS, PAD};

/// Which output head the model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Lm,
    Confidence,
}

/// Decoder self-attention masking for the confidence pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderMask {
    Causal,
    NonCausal,
}

impl std::str::FromStr for DecoderMask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "causal" => Ok(DecoderMask::Causal),
            "non-causal" | "noncausal" => Ok(DecoderMask::NonCausal),
            other => Err(Error::Parameter {
                name: "decoder_mask",
                message: format!("unknown mask '{other}'"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub feat_dim: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
    pub head_kind: HeadKind,
    pub decoder_mask: DecoderMask,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Configuration(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size == 0
            || self.feat_dim == 0
            || self.n_encoder_layers == 0
            || self.n_decoder_layers == 0
            || self.max_seq_len == 0
        {
            return Err(Error::Configuration("all model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Configuration(format!(
                "dropout rate {} outside [0,1)",
                self.dropout_rate
            )));
        }
        if self.head_kind == HeadKind::Lm && self.decoder_mask != DecoderMask::Causal {
            return Err(Error::Configuration(
                "an LM-head model decodes autoregressively and requires the causal mask".into(),
            ));
        }
        Ok(())
    }
}

/// One named parameter tensor with its freeze flag.
#[derive(Debug, Clone)]
pub struct ParamEntry<S: Scalar> {
    pub name: String,
    pub tensor: Tensor<S>,
    pub frozen: bool,
}

/// The full parameter set for one model configuration.
#[derive(Debug, Clone)]
pub struct ModelParams<S: Scalar> {
    config: ModelConfig,
    entries: Vec<ParamEntry<S>>,
}

enum Init {
    Normal02,
    Zeros,
    Ones,
}

fn attention_names(prefix: &str, d: usize, out: &mut Vec<(String, Vec<usize>, Init)>) {
    for w in ["wq", "wk", "wv", "wo"] {
        out.push((format!("{prefix}.{w}"), vec![d, d], Init::Normal02));
    }
    for b in ["bq", "bk", "bv", "bo"] {
        out.push((format!("{prefix}.{b}"), vec![d], Init::Zeros));
    }
}

fn norm_names(prefix: &str, d: usize, out: &mut Vec<(String, Vec<usize>, Init)>) {
    out.push((format!("{prefix}.g"), vec![d], Init::Ones));
    out.push((format!("{prefix}.b"), vec![d], Init::Zeros));
}

fn mlp_names(prefix: &str, d: usize, out: &mut Vec<(String, Vec<usize>, Init)>) {
    out.push((format!("{prefix}.w1"), vec![d, 4 * d], Init::Normal02));
    out.push((format!("{prefix}.b1"), vec![4 * d], Init::Zeros));
    out.push((format!("{prefix}.w2"), vec![4 * d, d], Init::Normal02));
    out.push((format!("{prefix}.b2"), vec![d], Init::Zeros));
}

/// Canonical parameter layout for a config; checkpoint loading validates
/// against this single source of truth.
fn param_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = config.d_model;
    let mut out = Vec::new();
    out.push(("encoder.in_proj.w".to_string(), vec![config.feat_dim, d], Init::Normal02));
    out.push(("encoder.in_proj.b".to_string(), vec![d], Init::Zeros));
    out.push(("encoder.pos_emb".to_string(), vec![config.max_seq_len, d], Init::Normal02));
    for l in 0..config.n_encoder_layers {
        norm_names(&format!("encoder.l{l}.attn_ln"), d, &mut out);
        attention_names(&format!("encoder.l{l}.attn"), d, &mut out);
        norm_names(&format!("encoder.l{l}.mlp_ln"), d, &mut out);
        mlp_names(&format!("encoder.l{l}.mlp"), d, &mut out);
    }
    norm_names("encoder.ln_f", d, &mut out);
    out.push(("decoder.tok_emb".to_string(), vec![config.vocab_size, d], Init::Normal02));
    out.push(("decoder.pos_emb".to_string(), vec![config.max_seq_len, d], Init::Normal02));
    for l in 0..config.n_decoder_layers {
        norm_names(&format!("decoder.l{l}.self_ln"), d, &mut out);
        attention_names(&format!("decoder.l{l}.self"), d, &mut out);
        norm_names(&format!("decoder.l{l}.cross_ln"), d, &mut out);
        attention_names(&format!("decoder.l{l}.cross"), d, &mut out);
        norm_names(&format!("decoder.l{l}.mlp_ln"), d, &mut out);
        mlp_names(&format!("decoder.l{l}.mlp"), d, &mut out);
    }
    norm_names("decoder.ln_f", d, &mut out);
    match config.head_kind {
        HeadKind::Lm => {
            out.push(("head.lm.w".to_string(), vec![d, config.vocab_size], Init::Normal02));
            out.push(("head.lm.b".to_string(), vec![config.vocab_size], Init::Zeros));
        }
        HeadKind::Confidence => {
            // zero init so a fresh confidence head predicts 0.5 everywhere
            out.push(("head.conf.w".to_string(), vec![d, 1], Init::Zeros));
            out.push(("head.conf.b".to_string(), vec![1], Init::Zeros));
        }
    }
    out
}

/// Forward-pass mode: eval is deterministic, train applies dropout.
pub enum Mode<'a> {
    Eval,
    Train { rng: &'a mut dyn RngCore },
}

impl<S: Scalar> ModelParams<S> {
    /// Fresh random initialization for the given config.
    pub fn init<R: RngCore>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let std = S::cast(0.02);
        let entries = param_layout(config)
            .into_iter()
            .map(|(name, shape, init)| {
                let tensor = match init {
                    Init::Normal02 => Tensor::randn(&shape, std, rng),
                    Init::Zeros => Tensor::zeros(&shape),
                    Init::Ones => Tensor::full(&shape, S::one()),
                };
                tensor.set_requires_grad(true);
                ParamEntry {
                    name,
                    tensor,
                    frozen: false,
                }
            })
            .collect();
        Ok(ModelParams {
            config: config.clone(),
            entries,
        })
    }

    pub(crate) fn from_entries(config: ModelConfig, entries: Vec<ParamEntry<S>>) -> Result<Self> {
        config.validate()?;
        let expected = param_layout(&config);
        if expected.len() != entries.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors for this config, got {}",
                expected.len(),
                entries.len()
            )));
        }
        for ((name, shape, _), entry) in expected.iter().zip(&entries) {
            if name != &entry.name || shape != &entry.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor '{}' with shape {:?} does not match expected '{}' {:?}",
                    entry.name,
                    entry.tensor.shape(),
                    name,
                    shape
                )));
            }
        }
        Ok(ModelParams { config, entries })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn entries(&self) -> &[ParamEntry<S>] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> &Tensor<S> {
        &self
            .entries
            .iter()
            .find(|e| e.name == name)
            .unwrap_or_else(|| panic!("parameter '{name}' missing from layout"))
            .tensor
    }

    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for e in &self.entries {
            e.tensor.zero_grad();
        }
    }

    /// Parameter views for [`crate::optim::adam_step`], in layout order.
    pub fn adam_params(&self) -> Vec<AdamParam<'_, S>> {
        self.entries
            .iter()
            .map(|e| AdamParam {
                name: &e.name,
                tensor: &e.tensor,
                frozen: e.frozen,
            })
            .collect()
    }

    pub fn set_encoder_frozen(&mut self, frozen: bool) {
        for e in &mut self.entries {
            if e.name.starts_with("encoder.") {
                e.frozen = frozen;
            }
        }
    }

    fn dropout_in(&self, x: &Tensor<S>, mode: &mut Mode<'_>) -> Result<Tensor<S>> {
        match mode {
            Mode::Eval => Ok(x.clone()),
            Mode::Train { rng } => x.dropout(self.config.dropout_rate, &mut **rng, true),
        }
    }

    fn attention(
        &self,
        prefix: &str,
        x_q: &Tensor<S>,
        x_kv: &Tensor<S>,
        mask: Option<&Tensor<S>>,
    ) -> Result<Tensor<S>> {
        let d = self.config.d_model;
        let heads = self.config.n_heads;
        let dh = d / heads;
        let q = x_q
            .matmul(self.get(&format!("{prefix}.wq")))?
            .add_bias(self.get(&format!("{prefix}.bq")))?;
        let k = x_kv
            .matmul(self.get(&format!("{prefix}.wk")))?
            .add_bias(self.get(&format!("{prefix}.bk")))?;
        let v = x_kv
            .matmul(self.get(&format!("{prefix}.wv")))?
            .add_bias(self.get(&format!("{prefix}.bv")))?;
        let scale = S::cast(1.0 / (dh as f64).sqrt());
        let mut ctx = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = q.slice_cols(h * dh, (h + 1) * dh)?;
            let kh = k.slice_cols(h * dh, (h + 1) * dh)?;
            let vh = v.slice_cols(h * dh, (h + 1) * dh)?;
            let mut scores = qh.matmul(&kh.transpose()?)?.scale(scale);
            if let Some(m) = mask {
                scores = scores.add(m)?;
            }
            ctx.push(scores.softmax(1)?.matmul(&vh)?);
        }
        Tensor::concat_cols(&ctx)?
            .matmul(self.get(&format!("{prefix}.wo")))?
            .add_bias(self.get(&format!("{prefix}.bo")))
    }

    fn layer_norm_at(&self, prefix: &str, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.layer_norm(self.get(&format!("{prefix}.g")), self.get(&format!("{prefix}.b")))
    }

    fn mlp(&self, prefix: &str, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.matmul(self.get(&format!("{prefix}.w1")))?
            .add_bias(self.get(&format!("{prefix}.b1")))?
            .gelu()
            .matmul(self.get(&format!("{prefix}.w2")))?
            .add_bias(self.get(&format!("{prefix}.b2")))
    }

    /// Additive attention mask forbidding attention to later positions.
    fn causal_mask(n: usize) -> Tensor<S> {
        let neg = S::cast(-1e30);
        let mut data = vec![S::zero(); n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                data[i * n + j] = neg;
            }
        }
        Tensor::from_vec(&[n, n], data).expect("valid mask shape")
    }

    /// Encodes `[frames x feat_dim]` acoustic input into `[frames x d_model]`
    /// features; deterministic in eval mode.
    pub fn encode(&self, frames: &Tensor<S>, mode: &mut Mode<'_>) -> Result<Tensor<S>> {
        let shape = frames.shape();
        if shape.len() != 2 || shape[1] != self.config.feat_dim {
            return Err(Error::ShapeMismatch {
                op: "encode",
                lhs: shape,
                rhs: vec![0, self.config.feat_dim],
            });
        }
        let n = shape[0];
        if n == 0 || n > self.config.max_seq_len {
            return Err(Error::SequenceLength {
                got: n,
                max: self.config.max_seq_len,
            });
        }
        let mut x = frames
            .matmul(self.get("encoder.in_proj.w"))?
            .add_bias(self.get("encoder.in_proj.b"))?
            .add(&self.get("encoder.pos_emb").slice_rows(0, n)?)?;
        for l in 0..self.config.n_encoder_layers {
            let p = format!("encoder.l{l}");
            let attn_in = self.layer_norm_at(&format!("{p}.attn_ln"), &x)?;
            let attn = self.attention(&format!("{p}.attn"), &attn_in, &attn_in, None)?;
            x = x.add(&self.dropout_in(&attn, mode)?)?;
            let mlp_in = self.layer_norm_at(&format!("{p}.mlp_ln"), &x)?;
            let mlp = self.mlp(&format!("{p}.mlp"), &mlp_in)?;
            x = x.add(&self.dropout_in(&mlp, mode)?)?;
        }
        self.layer_norm_at("encoder.ln_f", &x)
    }

    fn decoder_stack(
        &self,
        encoder_features: &Tensor<S>,
        tokens: &[usize],
        mask: Option<&Tensor<S>>,
        mode: &mut Mode<'_>,
    ) -> Result<Tensor<S>> {
        let n = tokens.len();
        if n == 0 || n > self.config.max_seq_len {
            return Err(Error::SequenceLength {
                got: n,
                max: self.config.max_seq_len,
            });
        }
        let mut x = self
            .get("decoder.tok_emb")
            .embedding(tokens)?
            .add(&self.get("decoder.pos_emb").slice_rows(0, n)?)?;
        for l in 0..self.config.n_decoder_layers {
            let p = format!("decoder.l{l}");
            let self_in = self.layer_norm_at(&format!("{p}.self_ln"), &x)?;
            let self_attn = self.attention(&format!("{p}.self"), &self_in, &self_in, mask)?;
            x = x.add(&self.dropout_in(&self_attn, mode)?)?;
            let cross_in = self.layer_norm_at(&format!("{p}.cross_ln"), &x)?;
            let cross = self.attention(&format!("{p}.cross"), &cross_in, encoder_features, None)?;
            x = x.add(&self.dropout_in(&cross, mode)?)?;
            let mlp_in = self.layer_norm_at(&format!("{p}.mlp_ln"), &x)?;
            let mlp = self.mlp(&format!("{p}.mlp"), &mlp_in)?;
            x = x.add(&self.dropout_in(&mlp, mode)?)?;
        }
        self.layer_norm_at("decoder.ln_f", &x)
    }

    /// Teacher-forcing LM pass: logits `[len(input_tokens) x vocab_size]`,
    /// causal mask always applied.
    pub fn lm_forward(&self, encoder_features: &Tensor<S>, input_tokens: &[usize], mode: &mut Mode<'_>) -> Result<Tensor<S>> {
        if self.config.head_kind != HeadKind::Lm {
            return Err(Error::Configuration(
                "lm_forward requires a model with the LM head".into(),
            ));
        }
        let mask = Self::causal_mask(input_tokens.len());
        let h = self.decoder_stack(encoder_features, input_tokens, Some(&mask), mode)?;
        h.matmul(self.get("head.lm.w"))?.add_bias(self.get("head.lm.b"))
    }

    /// Next-token logits for a BOS-prefixed decode prefix.
    pub fn decode_step_logits(&self, encoder_features: &Tensor<S>, prefix_tokens: &[usize]) -> Result<Tensor<S>> {
        if prefix_tokens.first() != Some(&BOS) {
            return Err(Error::Parameter {
                name: "prefix_tokens",
                message: "prefix must be nonempty and start with BOS".into(),
            });
        }
        let logits = self.lm_forward(encoder_features, prefix_tokens, &mut Mode::Eval)?;
        let n = prefix_tokens.len();
        logits
            .slice_rows(n - 1, n)?
            .reshape(&[self.config.vocab_size])
    }

    /// Scores every hypothesis token in one parallel pass: probabilities
    /// `[len(hypothesis_tokens)]`, each strictly inside (0, 1). The decoder
    /// self-attention mask follows `config.decoder_mask`.
    pub fn confidence_forward(
        &self,
        encoder_features: &Tensor<S>,
        hypothesis_tokens: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<Tensor<S>> {
        if self.config.head_kind != HeadKind::Confidence {
            return Err(Error::Configuration(
                "confidence_forward requires a model with the confidence head".into(),
            ));
        }
        let mask = match self.config.decoder_mask {
            DecoderMask::Causal => Some(Self::causal_mask(hypothesis_tokens.len())),
            DecoderMask::NonCausal => None,
        };
        let h = self.decoder_stack(encoder_features, hypothesis_tokens, mask.as_ref(), mode)?;
        h.matmul(self.get("head.conf.w"))?
            .add_bias(self.get("head.conf.b"))?
            .sigmoid()
            .reshape(&[hypothesis_tokens.len()])
    }

    /// Greedy autoregressive decode from BOS until EOS or `max_len` emitted
    /// tokens, returning the softmax probability of each chosen token.
    /// PAD and BOS are never emitted.
    pub fn greedy_decode(&self, encoder_features: &Tensor<S>, max_len: usize) -> Result<GreedyDecode<S>> {
        if self.config.head_kind != HeadKind::Lm {
            return Err(Error::Configuration(
                "greedy_decode requires a model with the LM head".into(),
            ));
        }
        let cap = max_len.min(self.config.max_seq_len - 1);
        let mut prefix = vec![BOS];
        let mut token_ids = Vec::new();
        let mut token_probs = Vec::new();
        let mut truncated = true;
        while token_ids.len() < cap {
            let logits = self.decode_step_logits(encoder_features, &prefix)?;
            let mut row = logits.to_vec();
            row[PAD] = S::neg_infinity();
            row[BOS] = S::neg_infinity();
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let mut total = S::zero();
            let exps: Vec<S> = row
                .iter()
                .map(|&l| {
                    let e = (l - max).exp();
                    total += e;
                    e
                })
                .collect();
            let mut best = 0usize;
            for (i, &e) in exps.iter().enumerate() {
                if e > exps[best] {
                    best = i;
                }
            }
            token_ids.push(best);
            token_probs.push(exps[best] / total);
            prefix.push(best);
            if best == EOS {
                truncated = false;
                break;
            }
        }
        Ok(GreedyDecode {
            token_ids,
            token_probs,
            truncated,
        })
    }
}

/// Output of [`ModelParams::greedy_decode`].
#[derive(Debug, Clone)]
pub struct GreedyDecode<S: Scalar> {
    pub token_ids: Vec<usize>,
    pub token_probs: Vec<S>,
    /// True when decoding stopped at the length cap instead of EOS.
    pub truncated: bool,
}

/// Replaces the LM head with a freshly zero-initialized confidence head,
/// copying every non-head parameter bit-exactly. With `freeze_encoder`,
/// every `encoder.*` parameter gets its frozen flag set.
pub fn convert_to_confidence_model<S: Scalar>(
    asr_params: &ModelParams<S>,
    mask: DecoderMask,
    freeze_encoder: bool,
) -> Result<ModelParams<S>> {
    if asr_params.config.head_kind != HeadKind::Lm {
        return Err(Error::Configuration(
            "conversion starts from an LM-head model".into(),
        ));
    }
    let config = ModelConfig {
        head_kind: HeadKind::Confidence,
        decoder_mask: mask,
        ..asr_params.config.clone()
    };
    let d = config.d_model;
    let mut entries: Vec<ParamEntry<S>> = asr_params
        .entries
        .iter()
        .filter(|e| !e.name.starts_with("head."))
        .map(|e| {
            let tensor = e.tensor.detached_clone();
            tensor.set_requires_grad(true);
            ParamEntry {
                name: e.name.clone(),
                tensor,
                frozen: freeze_encoder && e.name.starts_with("encoder."),
            }
        })
        .collect();
    for (name, shape) in [("head.conf.w", vec![d, 1]), ("head.conf.b", vec![1])] {
        let tensor = Tensor::zeros(&shape);
        tensor.set_requires_grad(true);
        entries.push(ParamEntry {
            name: name.to_string(),
            tensor,
            frozen: false,
        });
    }
    ModelParams::from_entries(config, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_config(head_kind: HeadKind, decoder_mask: DecoderMask) -> ModelConfig {
        ModelConfig {
            vocab_size: 30,
            feat_dim: 6,
            d_model: 16,
            n_heads: 2,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            max_seq_len: 24,
            dropout_rate: 0.1,
            head_kind,
            decoder_mask,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny_config(HeadKind::Lm, DecoderMask::Causal);
        assert!(c.validate().is_ok());
        c.d_model = 15;
        assert!(c.validate().is_err());
        let mut c = tiny_config(HeadKind::Lm, DecoderMask::NonCausal);
        assert!(c.validate().is_err());
        c.head_kind = HeadKind::Confidence;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn encode_shape_determinism_and_length_guard() {
        let config = tiny_config(HeadKind::Lm, DecoderMask::Causal);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = ModelParams::<f64>::init(&config, &mut rng).unwrap();
        let frames = Tensor::randn(&[5, config.feat_dim], 1.0, &mut rng);
        let e1 = model.encode(&frames, &mut Mode::Eval).unwrap();
        assert_eq!(e1.shape(), vec![5, config.d_model]);
        let e2 = model.encode(&frames, &mut Mode::Eval).unwrap();
        assert!(e1
            .to_vec()
            .iter()
            .zip(e2.to_vec())
            .all(|(a, b)| a.to_bits() == b.to_bits()));

        let long = Tensor::<f64>::zeros(&[config.max_seq_len + 1, config.feat_dim]);
        assert!(matches!(
            model.encode(&long, &mut Mode::Eval),
            Err(Error::SequenceLength { .. })
        ));
        // zero-frame inputs are unrepresentable: tensor shapes must be positive
        assert!(Tensor::<f64>::from_vec(&[0, config.feat_dim], vec![]).is_err());
    }

    #[test]
    fn head_mismatch_is_a_configuration_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lm = ModelParams::<f64>::init(&tiny_config(HeadKind::Lm, DecoderMask::Causal), &mut rng).unwrap();
        let conf =
            ModelParams::<f64>::init(&tiny_config(HeadKind::Confidence, DecoderMask::Causal), &mut rng).unwrap();
        let frames = Tensor::randn(&[4, 6], 1.0, &mut rng);
        let e = lm.encode(&frames, &mut Mode::Eval).unwrap();
        assert!(matches!(
            lm.confidence_forward(&e, &[4, 5], &mut Mode::Eval),
            Err(Error::Configuration(_))
        ));
        assert!(matches!(
            conf.decode_step_logits(&e, &[BOS, 4]),
            Err(Error::Configuration(_))
        ));
        assert!(matches!(
            conf.greedy_decode(&e, 8),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn decode_step_requires_bos_prefix_and_has_vocab_len() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let config = tiny_config(HeadKind::Lm, DecoderMask::Causal);
        let model = ModelParams::<f64>::init(&config, &mut rng).unwrap();
        let frames = Tensor::randn(&[4, 6], 1.0, &mut rng);
        let e = model.encode(&frames, &mut Mode::Eval).unwrap();
        assert!(model.decode_step_logits(&e, &[4, 5]).is_err());
        assert!(model.decode_step_logits(&e, &[]).is_err());
        let logits = model.decode_step_logits(&e, &[BOS, 4, 5]).unwrap();
        assert_eq!(logits.shape(), vec![config.vocab_size]);
    }

    #[test]
    fn causal_rerun_consistency_of_step_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let config = tiny_config(HeadKind::Lm, DecoderMask::Causal);
        let model = ModelParams::<f64>::init(&config, &mut rng).unwrap();
        let frames = Tensor::randn(&[5, 6], 1.0, &mut rng);
        let e = model.encode(&frames, &mut Mode::Eval).unwrap();
        let prefix = [BOS, 7, 9, 12];
        let step = model.decode_step_logits(&e, &prefix).unwrap().to_vec();
        let extended: Vec<usize> = prefix.iter().copied().chain([20, 21]).collect();
        let full = model.lm_forward(&e, &extended, &mut Mode::Eval).unwrap();
        let same_row = full
            .slice_rows(prefix.len() - 1, prefix.len())
            .unwrap()
            .to_vec();
        assert!(step
            .iter()
            .zip(&same_row)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn greedy_argmax_invariant_to_logit_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let config = tiny_config(HeadKind::Lm, DecoderMask::Causal);
        let model = ModelParams::<f64>::init(&config, &mut rng).unwrap();
        let frames = Tensor::randn(&[4, 6], 1.0, &mut rng);
        let e = model.encode(&frames, &mut Mode::Eval).unwrap();
        let logits = model.decode_step_logits(&e, &[BOS, 6]).unwrap();
        let shifted = logits.scale(1.0).to_vec().iter().map(|v| v + 7.5).collect::<Vec<_>>();
        let arg = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        let p1 = logits.softmax(0).unwrap().to_vec();
        let t = Tensor::from_vec(&[config.vocab_size], shifted).unwrap();
        let p2 = t.softmax(0).unwrap().to_vec();
        assert_eq!(arg(&p1), arg(&p2));
    }

    #[test]
    fn fresh_confidence_model_outputs_exactly_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let config = tiny_config(HeadKind::Confidence, DecoderMask::Causal);
        let model = ModelParams::<f64>::init(&config, &mut rng).unwrap();
        let frames = Tensor::randn(&[4, 6], 1.0, &mut rng);
        let e = model.encode(&frames, &mut Mode::Eval).unwrap();
        let probs = model.confidence_forward(&e, &[4, 9, 3, 2], &mut Mode::Eval).unwrap();
        assert!(probs.to_vec().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn confidence_outputs_stay_in_open_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let config = tiny_config(HeadKind::Confidence, DecoderMask::NonCausal);
        let model = ModelParams::<f64>::init(&config, &mut rng).unwrap();
        // blow up the head weights to stress the sigmoid range
        model.get("head.conf.w").map_data_in_place(|w| {
            for v in w.iter_mut() {
                *v = 40.0;
            }
        });
        let frames = Tensor::randn(&[6, 6], 2.0, &mut rng);
        let e = model.encode(&frames, &mut Mode::Eval).unwrap();
        let probs = model
            .confidence_forward(&e, &[5, 6, 7, 8, 9], &mut Mode::Eval)
            .unwrap()
            .to_vec();
        assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0), "{probs:?}");
    }

    #[test]
    fn conversion_copies_non_head_parameters_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let config = tiny_config(HeadKind::Lm, DecoderMask::Causal);
        let asr = ModelParams::<f64>::init(&config, &mut rng).unwrap();
        let conf = convert_to_confidence_model(&asr, DecoderMask::Causal, true).unwrap();
        for e in asr.entries() {
            if e.name.starts_with("head.") {
                continue;
            }
            let copied = conf.get(&e.name).to_vec();
            let original = e.tensor.to_vec();
            assert!(copied.iter().zip(&original).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        assert_eq!(conf.get("head.conf.w").shape(), vec![config.d_model, 1]);
        assert_eq!(conf.get("head.conf.b").shape(), vec![1]);
        assert!(conf.entries().iter().all(|e| e.frozen == e.name.starts_with("encoder.")));
        // zero-init head: first forward is all 0.5
        let frames = Tensor::randn(&[3, 6], 1.0, &mut rng);
        let e = conf.encode(&frames, &mut Mode::Eval).unwrap();
        let probs = conf.confidence_forward(&e, &[4, 5], &mut Mode::Eval).unwrap();
        assert!(probs.to_vec().iter().all(|&p| p == 0.5));
        // converting a confidence model is an error
        assert!(convert_to_confidence_model(&conf, DecoderMask::Causal, false).is_err());
    }

    #[test]
    fn greedy_decode_probs_are_probabilities_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let config = tiny_config(HeadKind::Lm, DecoderMask::Causal);
        let model = ModelParams::<f64>::init(&config, &mut rng).unwrap();
        let frames = Tensor::randn(&[4, 6], 1.0, &mut rng);
        let e = model.encode(&frames, &mut Mode::Eval).unwrap();
        let a = model.greedy_decode(&e, 10).unwrap();
        let b = model.greedy_decode(&e, 10).unwrap();
        assert_eq!(a.token_ids, b.token_ids);
        assert!(a.token_probs.iter().all(|&p| p > 0.0 && p <= 1.0));
        assert!(a.token_ids.iter().all(|&t| t != PAD && t != BOS));
        assert!(a.token_ids.len() <= 10);
        if a.truncated {
            assert_eq!(a.token_ids.len(), 10);
        } else {
            assert_eq!(*a.token_ids.last().unwrap(), EOS);
        }
    }
}
