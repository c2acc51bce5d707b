use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub(crate) fn ngram_counts<T: Ord + Clone>(words: &[T], n: usize) -> BTreeMap<Vec<T>, usize> {
    let mut counts = BTreeMap::new();
    if words.len() >= n {
        for g in words.windows(n) {
            *counts.entry(g.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and hypothesis n-gram totals for orders 1..=max_n,
/// summed over the corpus.
pub fn ngram_precisions<T: Ord + Clone>(
    hypotheses: &[Vec<T>],
    references: &[Vec<Vec<T>>],
    max_n: usize,
) -> Result<Vec<(usize, usize)>> {
    check_inputs(hypotheses, references)?;
    let mut out = vec![(0, 0); max_n];
    for (h, refs) in hypotheses.iter().zip(references) {
        for n in 1..=max_n {
            let mut best: BTreeMap<Vec<T>, usize> = BTreeMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = best.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            let hc = ngram_counts(h, n);
            out[n - 1].0 += hc.iter().map(|(g, c)| (*c).min(best.get(g).copied().unwrap_or(0))).sum::<usize>();
            out[n - 1].1 += h.len().saturating_sub(n - 1);
        }
    }
    Ok(out)
}

pub(crate) fn check_inputs<T>(hypotheses: &[Vec<T>], references: &[Vec<Vec<T>>]) -> Result<()> {
    if hypotheses.is_empty() || hypotheses.len() != references.len() || references.iter().any(|r| r.is_empty()) {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Corpus-level BLEU@1..max_n on a 0–100 scale with uniform weights and the
/// brevity penalty against the closest reference length (shorter on ties).
pub fn bleu<T: Ord + Clone>(hypotheses: &[Vec<T>], references: &[Vec<Vec<T>>], max_n: usize) -> Result<Vec<f64>> {
    let prec = ngram_precisions(hypotheses, references, max_n)?;
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (h, refs) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(h.len()), l))
            .expect("references are nonempty");
    }
    if hyp_len == 0 {
        return Ok(vec![0.0; max_n]);
    }
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let mut out = Vec::with_capacity(max_n);
    let mut log_sum = 0.0;
    let mut zero = false;
    for (n, &(m, t)) in prec.iter().enumerate() {
        if m == 0 || t == 0 {
            zero = true;
        } else {
            log_sum += (m as f64 / t as f64).ln();
        }
        out.push(if zero { 0.0 } else { 100.0 * bp * (log_sum / (n + 1) as f64).exp() });
    }
    Ok(out)
}
