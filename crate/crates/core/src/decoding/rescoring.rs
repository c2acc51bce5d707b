//! Teacher rescoring and final candidate selection.

use super::iterative::Candidate;
use crate::corpus::vocab::{TokenId, BOS};
use crate::error::{Error, Result};
use crate::model::{Network, Session, VideoFeatures};
use crate::numerics::Real;

/// Teacher probability of every token given its prefix, for each sentence,
/// from one causal pass over all sentences.
pub fn teacher_rescore_batch<F: Real>(
    session: &mut Session<'_, F>,
    features: &VideoFeatures,
    sentences: &[&[TokenId]],
) -> Result<Vec<Vec<f64>>> {
    if !session.config().causal {
        return Err(Error::Config("the rescoring teacher must be an autoregressive model".into()));
    }
    if sentences.iter().any(|s| s.is_empty()) {
        return Err(Error::EmptySentence);
    }
    let memory = session.encode(features)?;
    let inputs: Vec<Vec<TokenId>> = sentences
        .iter()
        .map(|s| std::iter::once(BOS).chain(s[..s.len() - 1].iter().copied()).collect())
        .collect();
    let segs: Vec<&[TokenId]> = inputs.iter().map(Vec::as_slice).collect();
    let logits = session.decode(memory, &segs)?;
    let probs = session.probabilities(logits)?;
    let v = probs.shape()[1];
    let mut out = Vec::with_capacity(sentences.len());
    let mut row = 0;
    for s in sentences {
        let mut z = Vec::with_capacity(s.len());
        for &t in s.iter() {
            if t >= v {
                return Err(Error::IndexOutOfVocab { id: t, size: v });
            }
            z.push(probs.data()[row * v + t].f64());
            row += 1;
        }
        out.push(z);
    }
    Ok(out)
}

pub fn teacher_rescore<F: Real>(teacher: &Network<F>, features: &VideoFeatures, sentence: &[TokenId]) -> Result<Vec<f64>> {
    let mut s = teacher.session();
    Ok(teacher_rescore_batch(&mut s, features, &[sentence])?.remove(0))
}

/// Mean log confidence, or the joint `(1/2N) Σ (log c + log z)` when teacher
/// probabilities are present.
pub fn candidate_score(confidence: &[f64], teacher: Option<&[f64]>) -> f64 {
    let n = confidence.len() as f64;
    let own: f64 = confidence.iter().map(|c| c.ln()).sum();
    match teacher {
        None => own / n,
        Some(z) => (own + z.iter().map(|z| z.ln()).sum::<f64>()) / (2.0 * n),
    }
}

/// Index of the highest-scoring candidate; ties go to the shorter and then
/// the lexicographically smaller token sequence.
pub fn select_best(candidates: &[Candidate]) -> usize {
    assert!(!candidates.is_empty());
    let mut best = 0;
    for i in 1..candidates.len() {
        let (a, b) = (&candidates[i], &candidates[best]);
        let better = match a.score.total_cmp(&b.score) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => (a.tokens.len(), &a.tokens) < (b.tokens.len(), &b.tokens),
        };
        if better {
            best = i;
        }
    }
    best
}
