//! Line-delimited record streams shared by the pipeline stages.

use std::io::Write;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::datagen::Split;
use crate::error::{Error, Result};

/// One decoded utterance: the output of the ASR decode stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedRecord {
    pub id: String,
    pub split: Split,
    pub reference: String,
    pub hypothesis: String,
    pub token_ids: Vec<usize>,
    pub token_probs: Vec<f64>,
    pub word_final_indices: Vec<usize>,
    pub truncated: bool,
}

/// A decoded record extended with alignment labels; `word_confidences`
/// stays empty until a score source fills it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub id: String,
    pub split: Split,
    pub reference: String,
    pub hypothesis: String,
    pub token_ids: Vec<usize>,
    pub token_probs: Vec<f64>,
    pub word_final_indices: Vec<usize>,
    pub truncated: bool,
    pub words: Vec<String>,
    pub labels: Vec<u8>,
    pub deletions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_confidences: Option<Vec<f64>>,
}

/// Writes one compact JSON object per line.
pub fn write_jsonl<T: Serialize, W: Write + ?Sized>(w: &mut W, items: &[T]) -> Result<()> {
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::Parse {
            line: 0,
            message: format!("serialization failed: {e}"),
        })?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Parses one record per line; errors carry the 1-based line number.
/// `first_line` is the line number of the first item (after any header).
pub fn read_jsonl<T, I>(lines: I, first_line: usize) -> Result<Vec<T>>
where
    T: DeserializeOwned,
    I: IntoIterator<Item = std::io::Result<String>>,
{
    let mut out = Vec::new();
    for (i, line) in lines.into_iter().enumerate() {
        let line_no = first_line + i;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::BufRead;

    fn sample() -> LabeledRecord {
        LabeledRecord {
            id: "utt-00001".into(),
            split: Split::Eval,
            reference: "the cat".into(),
            hypothesis: "the bat".into(),
            token_ids: vec![23, 11, 8, 3, 5, 4, 23, 2],
            token_probs: vec![0.9, 0.8, 0.95, 0.99, 0.4, 0.7, 0.9, 0.97],
            word_final_indices: vec![3, 7],
            truncated: false,
            words: vec!["the".into(), "bat".into()],
            labels: vec![1, 0],
            deletions: 0,
            word_confidences: None,
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let records = vec![sample(), sample()];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &records).unwrap();
        let back: Vec<LabeledRecord> = read_jsonl((&buf[..]).lines(), 1).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn parse_error_names_the_line() {
        let text = format!("{}\nnot json\n", serde_json::to_string(&sample()).unwrap());
        let err = read_jsonl::<LabeledRecord, _>(text.as_bytes().lines(), 1).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }
}
