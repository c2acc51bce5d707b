use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const MASK: TokenId = 1;
pub const VISUAL: TokenId = 2;
pub const BOS: TokenId = 3;
pub const EOS: TokenId = 4;
pub const NUM_RESERVED: usize = 5;

pub const RESERVED: [&str; NUM_RESERVED] = ["<pad>", "[mask]", "[visual]", "<bos>", "<eos>"];

pub fn is_special(id: TokenId) -> bool {
    id < NUM_RESERVED
}

/// Token ↔ id bijection with the five reserved ids first.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    freq: Vec<u64>,
}

impl Vocabulary {
    /// Builds from caption words in the given order (duplicates ignored).
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, TokenId> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        for w in words {
            if RESERVED.contains(&w) {
                return Err(Error::InvalidSpec(format!("reserved token {w:?} used as a word")));
            }
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::InvalidSpec(format!("invalid word {w:?}")));
            }
            if !index.contains_key(w) {
                index.insert(w.to_string(), tokens.len());
                tokens.push(w.to_string());
            }
        }
        let freq = vec![0; tokens.len()];
        Ok(Vocabulary { tokens, index, freq })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of ordinary (non-reserved) words.
    pub fn num_words(&self) -> usize {
        self.tokens.len() - NUM_RESERVED
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn words(&self) -> impl Iterator<Item = (TokenId, &str)> {
        self.tokens
            .iter()
            .enumerate()
            .skip(NUM_RESERVED)
            .map(|(i, t)| (i, t.as_str()))
    }

    pub fn encode(&self, sentence: &str) -> Result<Vec<TokenId>> {
        sentence
            .split_whitespace()
            .map(|w| match self.id(w) {
                Some(id) if !is_special(id) => Ok(id),
                _ => Err(Error::UnknownToken {
                    word: w.to_string(),
                    line: None,
                }),
            })
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.tokens.get(i).map(String::as_str).unwrap_or("<?>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn count(&mut self, ids: &[TokenId]) {
        for &i in ids {
            self.freq[i] += 1;
        }
    }

    pub fn frequency(&self, id: TokenId) -> u64 {
        self.freq[id]
    }

    /// SHA-256 over the ordered token list, used to pair checkpoints with corpora.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}
