use rand::Rng as _;

use crate::corpus::vocab::{TokenId, MASK};
use crate::corpus::{PosLexicon, PosTag, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// A reference caption split into observed and masked positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedExample {
    pub y_star: Vec<TokenId>,
    pub masked: Vec<bool>,
}

impl MaskedExample {
    pub fn len(&self) -> usize {
        self.y_star.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_star.is_empty()
    }

    pub fn mask_count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn masked_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.masked.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }

    /// Decoder input: observed words in place, `[mask]` elsewhere.
    pub fn input(&self) -> Vec<TokenId> {
        self.y_star
            .iter()
            .zip(&self.masked)
            .map(|(&y, &m)| if m { MASK } else { y })
            .collect()
    }
}

/// Number of positions masked for ratio `beta` on a length-`n` caption.
pub fn mask_count_for(beta: f64, n: usize) -> usize {
    ((beta * n as f64).round() as usize).clamp(1, n)
}

pub fn sample_mask(y_star: &[TokenId], beta_low: f64, beta_high: f64, rng: &mut Rng) -> Result<MaskedExample> {
    let n = y_star.len();
    if n == 0 {
        return Err(Error::EmptySentence);
    }
    let beta = if beta_high > beta_low {
        rng.random_range(beta_low..=beta_high)
    } else {
        beta_low
    };
    let count = mask_count_for(beta, n);
    let mut masked = vec![false; n];
    for i in rand::seq::index::sample(rng, n, count) {
        masked[i] = true;
    }
    Ok(MaskedExample {
        y_star: y_star.to_vec(),
        masked,
    })
}

/// Per-id flag telling whether a vocabulary word is a visual word.
pub fn visual_word_table(vocab: &Vocabulary, lexicon: &PosLexicon, tags: &[PosTag]) -> Result<Vec<bool>> {
    let mut table = vec![false; vocab.len()];
    for (id, word) in vocab.words() {
        table[id] = lexicon.is_visual(word, tags)?;
    }
    Ok(table)
}

/// Keeps visual words and replaces everything else by `[mask]`.
pub fn build_visual_target(
    y_star: &[TokenId],
    vocab: &Vocabulary,
    lexicon: &PosLexicon,
    tags: &[PosTag],
) -> Result<Vec<TokenId>> {
    y_star
        .iter()
        .map(|&y| {
            if y >= vocab.len() {
                return Err(Error::IndexOutOfVocab { id: y, size: vocab.len() });
            }
            Ok(if lexicon.is_visual(vocab.token(y), tags)? { y } else { MASK })
        })
        .collect()
}

pub(crate) fn apply_visual_table(y_star: &[TokenId], table: &[bool]) -> Vec<TokenId> {
    y_star.iter().map(|&y| if table[y] { y } else { MASK }).collect()
}
