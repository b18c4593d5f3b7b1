//! Synthetic speech-like corpus: random word vocabulary with confusable
//! pairs, per-token acoustic prototypes plus Gaussian noise, and a
//! line-delimited manifest format with bit-exact round trips.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{read_jsonl, write_jsonl};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tokenizer::{Tokenizer, VOCAB_SIZE};

/// Corpus split; utterances are partitioned 60/20/20 by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    AsrTrain,
    ConfTrain,
    Eval,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "asr_train" => Ok(Split::AsrTrain),
            "conf_train" => Ok(Split::ConfTrain),
            "eval" => Ok(Split::Eval),
            other => Err(Error::Parameter {
                name: "split",
                message: format!("unknown split '{other}'"),
            }),
        }
    }
}

/// Knobs of the synthetic corpus generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    /// Number of distinct vocabulary words.
    pub vocab_size: usize,
    pub word_len_min: usize,
    pub word_len_max: usize,
    /// Fraction of vocabulary words that belong to a pair differing in
    /// exactly one character.
    pub confusable_fraction: f64,
    pub sentence_len_min: usize,
    pub sentence_len_max: usize,
    /// Per-component Gaussian noise added to each acoustic frame.
    pub noise_sigma: f64,
    pub frames_per_token: usize,
    pub feat_dim: usize,
    pub n_utterances: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            vocab_size: 40,
            word_len_min: 2,
            word_len_max: 5,
            confusable_fraction: 0.3,
            sentence_len_min: 3,
            sentence_len_max: 8,
            noise_sigma: 1.4,
            frames_per_token: 2,
            feat_dim: 16,
            n_utterances: 360,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, message: String| Err(Error::Parameter { name, message });
        if self.vocab_size == 0 {
            return bad("vocab_size", "must be positive".into());
        }
        if self.word_len_min == 0 || self.word_len_min > self.word_len_max {
            return bad("word_len", format!("empty range {}..={}", self.word_len_min, self.word_len_max));
        }
        if self.sentence_len_min == 0 || self.sentence_len_min > self.sentence_len_max {
            return bad(
                "sentence_len",
                format!("empty range {}..={}", self.sentence_len_min, self.sentence_len_max),
            );
        }
        if !(0.0..=1.0).contains(&self.confusable_fraction) {
            return bad("confusable_fraction", format!("{} outside [0,1]", self.confusable_fraction));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return bad("noise_sigma", format!("{} must be finite and >= 0", self.noise_sigma));
        }
        if self.frames_per_token == 0 {
            return bad("frames_per_token", "must be positive".into());
        }
        if self.feat_dim == 0 {
            return bad("feat_dim", "must be positive".into());
        }
        if self.n_utterances == 0 {
            return bad("n_utterances", "must be positive".into());
        }
        Ok(())
    }
}

/// One corpus item: reference text, synthetic acoustic frames, split tag.
#[derive(Debug, Clone)]
pub struct Utterance<S: Scalar> {
    pub id: String,
    pub text: String,
    /// `[frames x feat_dim]`, frames = frames_per_token * token count.
    pub frames: Tensor<S>,
    pub split: Split,
}

fn random_word<R: Rng>(rng: &mut R, len_min: usize, len_max: usize) -> String {
    let len = rng.random_range(len_min..=len_max);
    (0..len)
        .map(|_| (b'a' + rng.random_range(0..26u8)) as char)
        .collect()
}

fn build_vocabulary<R: Rng>(spec: &CorpusSpec, rng: &mut R) -> Result<Vec<String>> {
    let n_pairs = ((spec.confusable_fraction * spec.vocab_size as f64) / 2.0).round() as usize;
    let n_base = spec.vocab_size - n_pairs.min(spec.vocab_size);
    let mut words: Vec<String> = Vec::with_capacity(spec.vocab_size);
    let mut seen: HashSet<String> = HashSet::new();
    let mut attempts = 0usize;
    while words.len() < n_base {
        let w = random_word(rng, spec.word_len_min, spec.word_len_max);
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Parameter {
                name: "vocab_size",
                message: "cannot draw enough unique words for the given length range".into(),
            });
        }
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    // confusable partners: mutate one character of an existing word
    for i in 0..n_pairs.min(n_base) {
        let source = words[i].clone();
        let mut attempts = 0usize;
        loop {
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::Parameter {
                    name: "confusable_fraction",
                    message: "cannot derive a unique one-character variant".into(),
                });
            }
            let mut chars: Vec<char> = source.chars().collect();
            let pos = rng.random_range(0..chars.len());
            let replacement = (b'a' + rng.random_range(0..26u8)) as char;
            if replacement == chars[pos] {
                continue;
            }
            chars[pos] = replacement;
            let candidate: String = chars.into_iter().collect();
            if seen.insert(candidate.clone()) {
                words.push(candidate);
                break;
            }
        }
    }
    Ok(words)
}

/// Generates the corpus deterministically from the spec (including seed).
///
/// Acoustic frames are fixed random per-token prototype vectors plus
/// Gaussian noise of scale `noise_sigma`; with sigma = 0 repeated tokens
/// produce bit-identical frames.
pub fn generate_corpus<S: Scalar>(spec: &CorpusSpec) -> Result<Vec<Utterance<S>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tokenizer = Tokenizer::new();
    let vocabulary = build_vocabulary(spec, &mut rng)?;

    let prototypes: Vec<Vec<S>> = (0..VOCAB_SIZE)
        .map(|_| (0..spec.feat_dim).map(|_| S::standard_normal(&mut rng)).collect())
        .collect();

    let sigma = S::cast(spec.noise_sigma);
    let n = spec.n_utterances;
    let n_asr = n * 6 / 10;
    let n_conf = n * 2 / 10;
    let mut corpus = Vec::with_capacity(n);
    for u in 0..n {
        let len = rng.random_range(spec.sentence_len_min..=spec.sentence_len_max);
        let words: Vec<&str> = (0..len)
            .map(|_| vocabulary[rng.random_range(0..vocabulary.len())].as_str())
            .collect();
        let text = words.join(" ");
        let tokens = tokenizer.tokenize(&text)?;
        let frame_count = tokens.len() * spec.frames_per_token;
        let mut frames = Vec::with_capacity(frame_count * spec.feat_dim);
        for &t in &tokens {
            for _ in 0..spec.frames_per_token {
                for d in 0..spec.feat_dim {
                    frames.push(prototypes[t][d] + sigma * S::standard_normal(&mut rng));
                }
            }
        }
        let split = if u < n_asr {
            Split::AsrTrain
        } else if u < n_asr + n_conf {
            Split::ConfTrain
        } else {
            Split::Eval
        };
        corpus.push(Utterance {
            id: format!("utt-{u:05}"),
            text,
            frames: Tensor::from_vec(&[frame_count, spec.feat_dim], frames)?,
            split,
        });
    }
    Ok(corpus)
}

const MANIFEST_FORMAT: &str = "cwl-corpus-manifest";
const MANIFEST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ManifestHeader {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct ManifestRecord {
    id: String,
    split: Split,
    text: String,
    frame_shape: Vec<usize>,
    /// Little-endian 64-bit reals, base64.
    frames_le64: String,
}

/// Writes the corpus as line-delimited records behind a version header.
pub fn write_manifest<S: Scalar, W: Write + ?Sized>(corpus: &[Utterance<S>], w: &mut W) -> Result<()> {
    let header = ManifestHeader {
        format: MANIFEST_FORMAT.to_string(),
        version: MANIFEST_VERSION,
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    let records: Vec<ManifestRecord> = corpus
        .iter()
        .map(|u| {
            let mut bytes = Vec::with_capacity(u.frames.numel() * 8);
            u.frames.with_data(|data| {
                for &v in data {
                    bytes.extend_from_slice(&v.as_f64().to_le_bytes());
                }
            });
            ManifestRecord {
                id: u.id.clone(),
                split: u.split,
                text: u.text.clone(),
                frame_shape: u.frames.shape(),
                frames_le64: B64.encode(&bytes),
            }
        })
        .collect();
    write_jsonl(w, &records)
}

/// Reads a manifest back; the round trip is bit-exact for f64 frames.
pub fn read_manifest<S: Scalar, R: BufRead>(r: R) -> Result<Vec<Utterance<S>>> {
    let mut lines = r.lines();
    let header_line = lines
        .next()
        .ok_or(Error::Parse {
            line: 1,
            message: "missing manifest header".into(),
        })??;
    let header: ManifestHeader = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
        line: 1,
        message: format!("bad manifest header: {e}"),
    })?;
    if header.format != MANIFEST_FORMAT || header.version != MANIFEST_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported manifest {}@{}", header.format, header.version),
        });
    }
    let records: Vec<ManifestRecord> = read_jsonl(lines, 2)?;
    let mut corpus = Vec::with_capacity(records.len());
    for (i, rec) in records.into_iter().enumerate() {
        let line = i + 2;
        let bytes = B64.decode(rec.frames_le64.as_bytes()).map_err(|e| Error::Parse {
            line,
            message: format!("bad frame payload: {e}"),
        })?;
        let numel: usize = rec.frame_shape.iter().product();
        if rec.frame_shape.len() != 2 || bytes.len() != numel * 8 {
            return Err(Error::Parse {
                line,
                message: format!(
                    "frame payload of {} bytes does not match shape {:?}",
                    bytes.len(),
                    rec.frame_shape
                ),
            });
        }
        let data: Vec<S> = bytes
            .chunks_exact(8)
            .map(|c| S::cast(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        corpus.push(Utterance {
            id: rec.id,
            text: rec.text,
            frames: Tensor::from_vec(&rec.frame_shape, data)?,
            split: rec.split,
        });
    }
    Ok(corpus)
}
