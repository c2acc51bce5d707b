//! Plain-text walkthrough of the refinement iterations.

use super::iterative::Candidate;
use crate::corpus::vocab::{Vocabulary, MASK};

/// One line per iteration: `[M]` marks positions still masked, confidences in
/// parentheses.
pub fn render(candidate: &Candidate, vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for snap in &candidate.trace {
        let words: Vec<String> = snap
            .tokens
            .iter()
            .zip(&snap.confidence)
            .map(|(&t, &c)| {
                if t == MASK {
                    "[M]".to_string()
                } else {
                    format!("{}({c:.2})", vocab.token(t))
                }
            })
            .collect();
        out += &format!("t={}  {}\n", snap.iteration, words.join(" "));
    }
    out += &format!("final  {}  score={:.4}\n", vocab.decode(&candidate.tokens), candidate.score);
    out
}
