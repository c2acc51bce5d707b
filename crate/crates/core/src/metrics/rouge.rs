use super::bleu::check_inputs;
use crate::error::Result;

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure with recall weight `beta`.
pub fn rouge_l_pair<T: PartialEq>(hypothesis: &[T], reference: &[T], beta: f64) -> f64 {
    let l = lcs_len(hypothesis, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / hypothesis.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean over hypotheses of the best-reference ROUGE-L F-measure (β = 1.2), 0–100.
pub fn rouge_l<T: PartialEq>(hypotheses: &[Vec<T>], references: &[Vec<Vec<T>>]) -> Result<f64> {
    check_inputs(hypotheses, references)?;
    let total: f64 = hypotheses
        .iter()
        .zip(references)
        .map(|(h, refs)| refs.iter().map(|r| rouge_l_pair(h, r, 1.2)).fold(0.0, f64::max))
        .sum();
    Ok(100.0 * total / hypotheses.len() as f64)
}
