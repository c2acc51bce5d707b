use std::collections::{BTreeMap, BTreeSet};

use super::bleu::{check_inputs, ngram_counts};
use crate::error::Result;

const SIGMA: f64 = 6.0;

struct Doc<T> {
    vec: Vec<BTreeMap<Vec<T>, f64>>,
    norm: Vec<f64>,
    length: usize,
}

fn weigh<T: Ord + Clone>(words: &[T], df: &BTreeMap<Vec<T>, usize>, log_docs: f64) -> Doc<T> {
    let mut vec = Vec::with_capacity(4);
    let mut norm = Vec::with_capacity(4);
    for n in 1..=4 {
        let v: BTreeMap<Vec<T>, f64> = ngram_counts(words, n)
            .into_iter()
            .map(|(g, c)| {
                let d = df.get(&g).copied().unwrap_or(0).max(1) as f64;
                (g, c as f64 * (log_docs - d.ln()))
            })
            .collect();
        norm.push(v.values().map(|x| x * x).sum::<f64>().sqrt());
        vec.push(v);
    }
    Doc {
        vec,
        norm,
        length: words.len().saturating_sub(1),
    }
}

fn similarity<T: Ord>(h: &Doc<T>, r: &Doc<T>) -> f64 {
    let delta = h.length as f64 - r.length as f64;
    let penalty = (-(delta * delta) / (2.0 * SIGMA * SIGMA)).exp();
    let mut total = 0.0;
    for n in 0..4 {
        let mut val: f64 = h.vec[n]
            .iter()
            .map(|(g, &x)| {
                let y = r.vec[n].get(g).copied().unwrap_or(0.0);
                x.min(y) * y
            })
            .sum();
        if h.norm[n] != 0.0 && r.norm[n] != 0.0 {
            val /= h.norm[n] * r.norm[n];
        }
        total += val * penalty;
    }
    total / 4.0
}

/// Per-video CIDEr-D scores; document frequencies come from the references.
pub fn cider_d_scores<T: Ord + Clone>(hypotheses: &[Vec<T>], references: &[Vec<Vec<T>>]) -> Result<Vec<f64>> {
    check_inputs(hypotheses, references)?;
    let mut df: BTreeMap<Vec<T>, usize> = BTreeMap::new();
    for refs in references {
        let mut seen = BTreeSet::new();
        for r in refs {
            for n in 1..=4 {
                seen.extend(ngram_counts(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_docs = (references.len() as f64).ln();
    Ok(hypotheses
        .iter()
        .zip(references)
        .map(|(h, refs)| {
            let hd = weigh(h, &df, log_docs);
            let sum: f64 = refs.iter().map(|r| similarity(&hd, &weigh(r, &df, log_docs))).sum();
            10.0 * sum / refs.len() as f64
        })
        .collect())
}

pub fn cider_d<T: Ord + Clone>(hypotheses: &[Vec<T>], references: &[Vec<Vec<T>>]) -> Result<f64> {
    let s = cider_d_scores(hypotheses, references)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}
