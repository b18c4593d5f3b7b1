//! Versioned binary checkpoint: ASCII magic "CWL1", a JSON manifest of
//! (name, shape, offset, frozen) plus the model config, then little-endian
//! 64-bit-real tensor payloads. Loading validates every tensor against the
//! canonical layout for the stored config and fails loudly on mismatch.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams, ParamEntry};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CWL1";

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload section.
    offset: u64,
    frozen: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorMeta>,
}

/// Serializes parameters; byte output is a pure function of the params.
pub fn save_checkpoint<S: Scalar, W: Write + ?Sized>(params: &ModelParams<S>, w: &mut W) -> Result<()> {
    let mut offset = 0u64;
    let tensors: Vec<TensorMeta> = params
        .entries()
        .iter()
        .map(|e| {
            let meta = TensorMeta {
                name: e.name.clone(),
                shape: e.tensor.shape(),
                offset,
                frozen: e.frozen,
            };
            offset += (e.tensor.numel() * 8) as u64;
            meta
        })
        .collect();
    let header = Header {
        config: params.config().clone(),
        tensors,
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for e in params.entries() {
        e.tensor.with_data(|data| -> Result<()> {
            for &v in data {
                w.write_all(&v.as_f64().to_le_bytes())?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

/// Loads a checkpoint, validating magic, config and tensor shapes.
pub fn load_checkpoint<S: Scalar, R: Read>(r: &mut R) -> Result<ModelParams<S>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)
        .map_err(|_| Error::Checkpoint("file too short for header length".into()))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::Checkpoint("file too short for header".into()))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    header.config.validate()?;

    let mut expected_offset = 0u64;
    let mut entries = Vec::with_capacity(header.tensors.len());
    for meta in &header.tensors {
        if meta.offset != expected_offset {
            return Err(Error::Checkpoint(format!(
                "tensor '{}' at offset {}, expected {}",
                meta.name, meta.offset, expected_offset
            )));
        }
        let numel: usize = meta.shape.iter().product();
        let mut bytes = vec![0u8; numel * 8];
        r.read_exact(&mut bytes).map_err(|_| {
            Error::Checkpoint(format!("payload truncated at tensor '{}'", meta.name))
        })?;
        expected_offset += (numel * 8) as u64;
        let data: Vec<S> = bytes
            .chunks_exact(8)
            .map(|c| S::cast(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        let tensor = Tensor::param(&meta.shape, data)?;
        entries.push(ParamEntry {
            name: meta.name.clone(),
            tensor,
            frozen: meta.frozen,
        });
    }
    // from_entries validates names and shapes against the canonical layout
    ModelParams::from_entries(header.config, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DecoderMask, HeadKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config() -> ModelConfig {
        ModelConfig {
            vocab_size: 30,
            feat_dim: 6,
            d_model: 16,
            n_heads: 2,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            max_seq_len: 24,
            dropout_rate: 0.1,
            head_kind: HeadKind::Lm,
            decoder_mask: DecoderMask::Causal,
        }
    }

    #[test]
    fn round_trip_is_bit_exact_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut params = ModelParams::<f64>::init(&config(), &mut rng).unwrap();
        params.set_encoder_frozen(true);
        let mut buf = Vec::new();
        save_checkpoint(&params, &mut buf).unwrap();
        assert_eq!(&buf[..4], MAGIC);

        let loaded: ModelParams<f64> = load_checkpoint(&mut &buf[..]).unwrap();
        assert_eq!(loaded.config(), params.config());
        for (a, b) in params.entries().iter().zip(loaded.entries()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.frozen, b.frozen);
            let av = a.tensor.to_vec();
            let bv = b.tensor.to_vec();
            assert!(av.iter().zip(&bv).all(|(x, y)| x.to_bits() == y.to_bits()));
        }

        let mut buf2 = Vec::new();
        save_checkpoint(&params, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn bad_magic_fails_loudly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = ModelParams::<f64>::init(&config(), &mut rng).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&params, &mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(
            load_checkpoint::<f64, _>(&mut &buf[..]),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn truncated_payload_fails_loudly() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let params = ModelParams::<f64>::init(&config(), &mut rng).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&params, &mut buf).unwrap();
        buf.truncate(buf.len() - 9);
        let err = load_checkpoint::<f64, _>(&mut &buf[..]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn shape_tampering_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let params = ModelParams::<f64>::init(&config(), &mut rng).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&params, &mut buf).unwrap();
        // grow the declared vocab so every decoder/head shape disagrees
        let header_len = u64::from_le_bytes(buf[4..12].try_into().unwrap()) as usize;
        let header = String::from_utf8(buf[12..12 + header_len].to_vec()).unwrap();
        let tampered = header.replacen("\"vocab_size\":30", "\"vocab_size\":31", 1);
        assert_ne!(header, tampered, "pattern must exist in the header");
        let mut out = buf[..12].to_vec();
        out.extend_from_slice(tampered.as_bytes());
        out.extend_from_slice(&buf[12 + header_len..]);
        assert_eq!(out.len(), buf.len());
        assert!(matches!(
            load_checkpoint::<f64, _>(&mut &out[..]),
            Err(Error::Checkpoint(_))
        ));
    }
}
