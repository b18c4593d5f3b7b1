//! Character-level tokenizer over a fixed lowercase alphabet.
//!
//! Vocabulary ids are stable: PAD=0, BOS=1, EOS=2, SPACE=3, then 'a'..'z'.
//! Every multi-character word maps to at least two tokens, so word-level
//! aggregation over token scores is always exercised.

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SPACE: usize = 3;

const ALPHABET_START: usize = 4;
const ALPHABET_LEN: usize = 26;

/// Total number of token ids.
pub const VOCAB_SIZE: usize = ALPHABET_START + ALPHABET_LEN;

/// Bijective char <-> id maps over `a..z` plus the specials above.
#[derive(Debug, Clone, Default)]
pub struct Tokenizer;

impl Tokenizer {
    pub fn new() -> Self {
        Tokenizer
    }

    pub fn vocab_size(&self) -> usize {
        VOCAB_SIZE
    }

    pub fn id_for_char(&self, c: char) -> Result<usize> {
        match c {
            ' ' => Ok(SPACE),
            'a'..='z' => Ok(ALPHABET_START + (c as usize - 'a' as usize)),
            _ => Err(Error::Vocabulary(c)),
        }
    }

    pub fn char_for_id(&self, id: usize) -> Option<char> {
        match id {
            SPACE => Some(' '),
            _ if (ALPHABET_START..VOCAB_SIZE).contains(&id) => {
                Some((b'a' + (id - ALPHABET_START) as u8) as char)
            }
            _ => None,
        }
    }

    /// True for the tokens that close a word in a decoded sequence.
    pub fn is_word_marker(&self, id: usize) -> bool {
        id == SPACE || id == EOS
    }

    pub fn is_letter(&self, id: usize) -> bool {
        (ALPHABET_START..VOCAB_SIZE).contains(&id)
    }

    /// Maps lowercase text to ids; no BOS/EOS are added.
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        text.chars().map(|c| self.id_for_char(c)).collect()
    }

    /// Inverse of [`Tokenizer::tokenize`]; rejects BOS/EOS/PAD ids.
    pub fn detokenize(&self, ids: &[usize]) -> Result<String> {
        ids.iter()
            .map(|&id| {
                self.char_for_id(id).ok_or_else(|| Error::Parameter {
                    name: "detokenize",
                    message: format!("id {id} is not a text token"),
                })
            })
            .collect()
    }

    /// Indices of the last letter token of each word in a tokenized text
    /// (no BOS/EOS present).
    pub fn word_final_indices(&self, ids: &[usize]) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, &id) in ids.iter().enumerate() {
            if self.is_letter(id) && ids.get(i + 1).map_or(true, |&next| next == SPACE) {
                out.push(i);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_ids() {
        let tok = Tokenizer::new();
        let ids = tok.tokenize("ab").unwrap();
        assert_eq!(ids, vec![ALPHABET_START, ALPHABET_START + 1]);
        assert_eq!(tok.detokenize(&ids).unwrap(), "ab");
    }

    #[test]
    fn space_delimits_words_with_final_indices() {
        let tok = Tokenizer::new();
        let ids = tok.tokenize("a b").unwrap();
        assert_eq!(ids, vec![ALPHABET_START, SPACE, ALPHABET_START + 1]);
        assert_eq!(tok.word_final_indices(&ids), vec![0, 2]);
    }

    #[test]
    fn empty_text_is_empty() {
        let tok = Tokenizer::new();
        assert_eq!(tok.tokenize("").unwrap(), Vec::<usize>::new());
        assert_eq!(tok.word_final_indices(&[]), Vec::<usize>::new());
    }

    #[test]
    fn out_of_alphabet_char_is_named() {
        let tok = Tokenizer::new();
        let err = tok.tokenize("aZb").unwrap_err();
        assert!(err.to_string().contains('Z'), "{err}");
        assert!(tok.tokenize("a1").is_err());
    }

    #[test]
    fn multi_character_words_take_multiple_tokens() {
        let tok = Tokenizer::new();
        for word in ["ab", "cat", "zebra"] {
            assert!(tok.tokenize(word).unwrap().len() >= 2);
        }
    }

    #[test]
    fn detokenize_rejects_control_ids() {
        let tok = Tokenizer::new();
        for id in [PAD, BOS, EOS] {
            assert!(tok.detokenize(&[id]).is_err());
        }
    }
}
