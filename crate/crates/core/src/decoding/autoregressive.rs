//! Left-to-right beam search for the causal baseline.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{TokenId, BOS, EOS, NUM_RESERVED};
use crate::error::{Error, Result};
use crate::model::{Network, VideoFeatures};
use crate::numerics::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArConfig {
    pub beam: usize,
    /// Emit exactly this many words and no end token (latency measurements).
    pub exact_len: Option<usize>,
}

impl Default for ArConfig {
    fn default() -> Self {
        ArConfig { beam: 5, exact_len: None }
    }
}

#[derive(Clone, Debug)]
pub struct ArOutput {
    pub tokens: Vec<TokenId>,
    /// Mean log-probability of the emitted tokens, end token included.
    pub score: f64,
    /// Finished hypotheses with their scores.
    pub candidates: Vec<(Vec<TokenId>, f64)>,
    pub passes: usize,
    pub encode_ms: f64,
    pub wall_ms: f64,
}

impl ArOutput {
    pub fn touched(&self) -> BTreeSet<TokenId> {
        self.candidates.iter().flat_map(|(t, _)| t.iter().copied()).collect()
    }
}

struct Hyp {
    tokens: Vec<TokenId>,
    logp: f64,
}

pub fn ar_decode<F: Real>(model: &Network<F>, features: &VideoFeatures, cfg: &ArConfig) -> Result<ArOutput> {
    if !model.config().causal {
        return Err(Error::Config("beam search needs an autoregressive model".into()));
    }
    if cfg.beam == 0 {
        return Err(Error::Config("beam must be at least 1".into()));
    }
    let max_words = model.config().max_len;
    if let Some(n) = cfg.exact_len {
        if n == 0 || n > max_words {
            return Err(Error::LengthOutOfRange { len: n, min: 1, max: max_words });
        }
    }
    let start = Instant::now();
    let mut session = model.session();
    let memory = session.encode(features)?;
    let encode_ms = start.elapsed().as_secs_f64() * 1e3;
    let v = model.config().vocab_size;

    let mut live = vec![Hyp { tokens: vec![BOS], logp: 0.0 }];
    let mut finished: Vec<(Vec<TokenId>, f64, usize)> = Vec::new();
    let last_step = cfg.exact_len.unwrap_or(max_words);
    for step in 0..=last_step {
        if live.is_empty() || finished.len() >= cfg.beam {
            break;
        }
        if cfg.exact_len == Some(step) {
            finished.extend(live.drain(..).map(|h| (h.tokens[1..].to_vec(), h.logp, step)));
            break;
        }
        let segs: Vec<&[TokenId]> = live.iter().map(|h| h.tokens.as_slice()).collect();
        let logits = session.decode(memory, &segs)?;
        let probs = session.probabilities(logits)?;
        let mut expansions: Vec<(f64, usize, TokenId)> = Vec::new();
        let mut row = 0;
        for (b, h) in live.iter().enumerate() {
            row += h.tokens.len();
            let p = &probs.data()[(row - 1) * v..row * v];
            let words_allowed = step < max_words;
            let end_allowed = step > 0 && cfg.exact_len.is_none();
            if end_allowed {
                expansions.push((h.logp + p[EOS].f64().ln(), b, EOS));
            }
            if words_allowed {
                for (w, pw) in p.iter().enumerate().skip(NUM_RESERVED) {
                    expansions.push((h.logp + pw.f64().ln(), b, w));
                }
            }
        }
        expansions.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        expansions.truncate(cfg.beam);
        let mut next = Vec::with_capacity(expansions.len());
        for (logp, b, w) in expansions {
            if w == EOS {
                finished.push((live[b].tokens[1..].to_vec(), logp, step + 1));
            } else {
                let mut tokens = live[b].tokens.clone();
                tokens.push(w);
                next.push(Hyp { tokens, logp });
            }
        }
        live = next;
    }
    if finished.is_empty() {
        return Err(Error::Config("beam search produced no hypothesis".into()));
    }
    let candidates: Vec<(Vec<TokenId>, f64)> =
        finished.into_iter().map(|(t, logp, count)| (t, logp / count as f64)).collect();
    let mut best = 0;
    for i in 1..candidates.len() {
        let (a, b) = (&candidates[i], &candidates[best]);
        let better = match a.1.total_cmp(&b.1) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => (a.0.len(), &a.0) < (b.0.len(), &b.0),
        };
        if better {
            best = i;
        }
    }
    Ok(ArOutput {
        tokens: candidates[best].0.clone(),
        score: candidates[best].1,
        candidates,
        passes: session.passes(),
        encode_ms,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
