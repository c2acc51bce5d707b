use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{TokenId, NUM_RESERVED};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    pub novel_pct: f64,
    pub unique_pct: f64,
    pub vocab_usage_pct: f64,
    pub coverage_at: BTreeMap<usize, f64>,
}

fn words_pct(words: &BTreeSet<TokenId>, num_words: usize) -> f64 {
    let used = words.iter().filter(|&&w| w >= NUM_RESERVED).count();
    100.0 * used as f64 / num_words.max(1) as f64
}

/// Novel, Unique, Vocab Usage and Coverage@k over the final captions.
///
/// `touched[k]` holds, per video, the words touched while decoding its top-k
/// candidates. Percentages are relative to `num_words` ordinary vocabulary words.
pub fn diversity(
    finals: &[Vec<TokenId>],
    training: &BTreeSet<Vec<TokenId>>,
    num_words: usize,
    touched: &BTreeMap<usize, Vec<BTreeSet<TokenId>>>,
) -> Result<Diversity> {
    if finals.is_empty() {
        return Err(Error::EmptyInput);
    }
    let m = finals.len() as f64;
    let novel = finals.iter().filter(|c| !training.contains(*c)).count();
    let distinct: BTreeSet<&Vec<TokenId>> = finals.iter().collect();
    let used: BTreeSet<TokenId> = finals.iter().flatten().copied().collect();
    let mut coverage_at = BTreeMap::new();
    for (&k, sets) in touched {
        let all: BTreeSet<TokenId> = sets.iter().flatten().copied().collect();
        coverage_at.insert(k, words_pct(&all, num_words));
    }
    Ok(Diversity {
        novel_pct: 100.0 * novel as f64 / m,
        unique_pct: 100.0 * distinct.len() as f64 / m,
        vocab_usage_pct: words_pct(&used, num_words),
        coverage_at,
    })
}

/// Number of distinct n-grams per category.
pub fn unique_ngrams_by_category<T: Ord + Clone>(
    captions: &[Vec<T>],
    categories: &[usize],
    n: usize,
) -> Result<BTreeMap<usize, usize>> {
    if captions.len() != categories.len() {
        return Err(Error::shape(
            "unique_ngrams_by_category",
            format!("{} captions, {} categories", captions.len(), categories.len()),
        ));
    }
    let mut sets: BTreeMap<usize, BTreeSet<&[T]>> = BTreeMap::new();
    for (c, &cat) in captions.iter().zip(categories) {
        let set = sets.entry(cat).or_default();
        if c.len() >= n {
            set.extend(c.windows(n));
        }
    }
    Ok(sets.into_iter().map(|(k, s)| (k, s.len())).collect())
}

/// Percentage of the `num_words` ordinary words seen at each position
/// 1..=max_len of the training captions.
pub fn per_position_vocab_usage(captions: &[Vec<TokenId>], num_words: usize, max_len: usize) -> Vec<f64> {
    let mut seen = vec![BTreeSet::new(); max_len];
    for c in captions {
        for (p, &w) in c.iter().take(max_len).enumerate() {
            seen[p].insert(w);
        }
    }
    seen.iter().map(|s| words_pct(s, num_words)).collect()
}
