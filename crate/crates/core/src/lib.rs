//! Desk-scale laboratory for word-level ASR confidence estimation.
//!
//! The pipeline: synthetic corpus -> toy encoder-decoder ASR -> greedy
//! hypothesis decoding -> alignment-derived correctness labels ->
//! confidence-head fine-tuning -> calibrated confidence metrics, with a
//! causal/non-causal decoder-mask ablation and a min-softmax baseline.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! concrete pipeline aliases below fix `f64`, which all interchange
//! formats store.

pub mod asr;
pub mod confidence;
pub mod datagen;
pub mod error;
pub mod labeling;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod records;
pub mod scalar;
pub mod tensor;
pub mod tokenizer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default pipeline scalar: 64-bit floats everywhere.
pub type F = f64;

pub type Tensor64 = tensor::Tensor<F>;
pub type ModelParams64 = model::ModelParams<F>;
pub type Utterance64 = datagen::Utterance<F>;
pub type Hypothesis64 = asr::Hypothesis<F>;
pub type ConfTrainItem64 = confidence::ConfTrainItem<F>;
pub type ScoredUtterance64 = metrics::ScoredUtterance<F>;
