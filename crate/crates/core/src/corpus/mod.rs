//! Corpus files, vocabulary, part-of-speech lexicon and the synthetic generator.

pub mod io;
pub mod lexicon;
pub mod synth;
pub mod vocab;

pub use io::{Corpus, LoadOptions, Manifest, ModalityFile, RawVideo, Split, VideoRecord};
pub use lexicon::{PosLexicon, PosTag};
pub use synth::{synth_generate, SynthSpec};
pub use vocab::{TokenId, Vocabulary};

/// Empirical length distribution of `captions`; entry `j` is the share of
/// captions with length `j + 1`, lengths above `max_len` counted at `max_len`.
pub fn length_distribution<T: AsRef<[TokenId]>>(captions: &[T], max_len: usize) -> crate::Result<Vec<f64>> {
    if captions.is_empty() {
        return Err(crate::Error::EmptyInput);
    }
    let mut dist = vec![0.0; max_len];
    for c in captions {
        let n = c.as_ref().len();
        if n == 0 {
            return Err(crate::Error::EmptySentence);
        }
        dist[n.min(max_len) - 1] += 1.0;
    }
    let total = captions.len() as f64;
    dist.iter_mut().for_each(|p| *p /= total);
    Ok(dist)
}
