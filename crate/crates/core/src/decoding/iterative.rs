//! Template generation and the mask-predict, easy-first and left-to-right
//! refinement loops, run jointly over all length candidates.

use std::collections::BTreeSet;

use super::schedule::{fixed_commit_counts, iteration_count, mask_count};
use super::{Algorithm, DecodeConfig};
use crate::corpus::vocab::{TokenId, MASK, NUM_RESERVED, VISUAL};
use crate::error::Result;
use crate::model::Session;
use crate::numerics::{Real, Var};

/// Tokens and confidences after one iteration; iteration 0 is the template.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub tokens: Vec<TokenId>,
    pub confidence: Vec<f64>,
    /// Positions fed as observed words to the next pass.
    pub observed: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub tokens: Vec<TokenId>,
    pub confidence: Vec<f64>,
    /// Positions fixed by the template (Y_obs at the first iteration).
    pub visual: Vec<bool>,
    /// Teacher probabilities when rescored.
    pub teacher: Option<Vec<f64>>,
    pub score: f64,
    /// Every word predicted at any iteration.
    pub touched: BTreeSet<TokenId>,
    pub trace: Vec<Snapshot>,
}

struct Slot {
    tokens: Vec<TokenId>,
    conf: Vec<f64>,
    observed: Vec<bool>,
    visual: Vec<bool>,
    touched: BTreeSet<TokenId>,
    trace: Vec<Snapshot>,
    /// Commit sizes still to perform (easy-first / left-to-right).
    plan: Vec<usize>,
}

impl Slot {
    fn input(&self) -> Vec<TokenId> {
        self.tokens
            .iter()
            .zip(&self.observed)
            .map(|(&t, &o)| if o { t } else { MASK })
            .collect()
    }

    fn snapshot(&mut self, iteration: usize, keep: bool) {
        if keep {
            self.trace.push(Snapshot {
                iteration,
                tokens: self.tokens.clone(),
                confidence: self.conf.clone(),
                observed: self.observed.clone(),
            });
        }
    }

    fn len(&self) -> usize {
        self.tokens.len()
    }
}

/// Highest-probability real word; ties go to the lowest id.
fn best_word<F: Real>(row: &[F]) -> (TokenId, f64) {
    let mut best = NUM_RESERVED;
    for i in NUM_RESERVED + 1..row.len() {
        if row[i] > row[best] {
            best = i;
        }
    }
    (best, row[best].f64())
}

/// Highest-probability entry among `[mask]` and the real words.
fn best_template_token<F: Real>(row: &[F]) -> (TokenId, f64) {
    let (w, p) = best_word(row);
    if row[MASK].f64() >= p {
        (MASK, row[MASK].f64())
    } else {
        (w, p)
    }
}

/// One batched decoder call over the inputs of `slots[active]`; returns the
/// probability rows of each active slot.
fn pass<F: Real>(session: &mut Session<'_, F>, memory: Var, inputs: &[Vec<TokenId>]) -> Result<Vec<Vec<F>>> {
    let segs: Vec<&[TokenId]> = inputs.iter().map(Vec::as_slice).collect();
    let logits = session.decode(memory, &segs)?;
    let probs = session.probabilities(logits)?;
    let v = probs.shape()[1];
    let mut out = Vec::with_capacity(inputs.len());
    let mut row = 0;
    for s in inputs {
        out.push(probs.data()[row * v..(row + s.len()) * v].to_vec());
        row += s.len();
    }
    Ok(out)
}

/// Template generation: feed `[visual]` at every position and
/// keep the argmax over `[mask]` plus the real words.
pub fn generate_template<F: Real>(
    session: &mut Session<'_, F>,
    memory: Var,
    lengths: &[usize],
) -> Result<Vec<(Vec<TokenId>, Vec<f64>)>> {
    let v = session.config().vocab_size;
    let inputs: Vec<Vec<TokenId>> = lengths.iter().map(|&n| vec![VISUAL; n]).collect();
    let probs = pass(session, memory, &inputs)?;
    Ok(probs
        .iter()
        .map(|p| p.chunks(v).map(best_template_token).unzip())
        .collect())
}

/// Initial state of one candidate before refinement.
#[derive(Clone, Debug, PartialEq)]
pub struct Start {
    pub tokens: Vec<TokenId>,
    pub confidence: Vec<f64>,
    pub observed: Vec<bool>,
}

/// Observed set of a template: every position that is not `[mask]`.
pub fn init_observed(template: &[TokenId]) -> Vec<bool> {
    template.iter().map(|&t| t != MASK).collect()
}

/// Decodes one candidate per entry of `lengths` with the configured algorithm.
pub fn run<F: Real>(
    session: &mut Session<'_, F>,
    memory: Var,
    lengths: &[usize],
    cfg: &DecodeConfig,
) -> Result<Vec<Candidate>> {
    let starts: Vec<Start> = if cfg.use_template {
        generate_template(session, memory, lengths)?
            .into_iter()
            .map(|(tokens, confidence)| Start {
                observed: init_observed(&tokens),
                tokens,
                confidence,
            })
            .collect()
    } else {
        lengths
            .iter()
            .map(|&n| Start {
                tokens: vec![MASK; n],
                confidence: vec![0.0; n],
                observed: vec![false; n],
            })
            .collect()
    };
    run_from(session, memory, starts, cfg)
}

/// Runs the refinement stage from explicit initial observed sets. Observed
/// positions of `starts` count as template words.
pub fn run_from<F: Real>(
    session: &mut Session<'_, F>,
    memory: Var,
    starts: Vec<Start>,
    cfg: &DecodeConfig,
) -> Result<Vec<Candidate>> {
    let v = session.config().vocab_size;
    let mut slots: Vec<Slot> = starts
        .into_iter()
        .map(|st| Slot {
            visual: st.observed.clone(),
            touched: st.tokens.iter().copied().filter(|&t| t != MASK).collect(),
            tokens: st.tokens,
            conf: st.confidence,
            observed: st.observed,
            trace: Vec::new(),
            plan: Vec::new(),
        })
        .collect();
    for s in &mut slots {
        let has_template = s.visual.iter().any(|&x| x);
        s.snapshot(0, cfg.trace && (cfg.use_template || has_template));
    }

    match cfg.algorithm {
        Algorithm::Mp => mask_predict(session, memory, &mut slots, cfg, v)?,
        Algorithm::Ef | Algorithm::L2r => {
            commit_loop(session, memory, &mut slots, cfg, v)?;
            if cfg.refine_visual {
                refine_visual_words(session, memory, &mut slots, cfg, v)?;
            }
        }
    }

    Ok(slots
        .into_iter()
        .map(|s| Candidate {
            tokens: s.tokens,
            confidence: s.conf,
            visual: s.visual,
            teacher: None,
            score: 0.0,
            touched: s.touched,
            trace: s.trace,
        })
        .collect())
}

fn mask_predict<F: Real>(
    session: &mut Session<'_, F>,
    memory: Var,
    slots: &mut [Slot],
    cfg: &DecodeConfig,
    v: usize,
) -> Result<()> {
    let total = cfg.t;
    // A template that fixed every position still leaves one slot to predict.
    for s in slots.iter_mut() {
        if s.observed.iter().all(|&o| o) {
            let worst = lowest_confidence(&s.conf, 1);
            s.observed[worst[0]] = false;
        }
    }
    for t in 1..=total {
        let inputs: Vec<Vec<TokenId>> = slots.iter().map(Slot::input).collect();
        let probs = pass(session, memory, &inputs)?;
        for (s, p) in slots.iter_mut().zip(&probs) {
            for n in 0..s.len() {
                if !s.observed[n] {
                    let (w, c) = best_word(&p[n * v..(n + 1) * v]);
                    s.tokens[n] = w;
                    s.conf[n] = c;
                    s.touched.insert(w);
                }
            }
            if t < total {
                let m = mask_count(s.len(), t + 1, total);
                s.observed = vec![true; s.len()];
                for n in lowest_confidence(&s.conf, m) {
                    s.observed[n] = false;
                }
            } else {
                s.observed = vec![true; s.len()];
            }
            s.snapshot(t, cfg.trace);
        }
    }
    Ok(())
}

/// The `m` lowest-confidence positions; among equal confidences the higher
/// index is masked first so that lower indices stay observed.
fn lowest_confidence(conf: &[f64], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..conf.len()).collect();
    order.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]).then(a.cmp(&b)));
    let keep = conf.len() - m.min(conf.len());
    let mut masked = order.split_off(keep);
    masked.sort_unstable();
    masked
}

fn commit_loop<F: Real>(
    session: &mut Session<'_, F>,
    memory: Var,
    slots: &mut [Slot],
    cfg: &DecodeConfig,
    v: usize,
) -> Result<()> {
    for s in slots.iter_mut() {
        let open = s.observed.iter().filter(|&&o| !o).count();
        let u = s.len() - open;
        s.plan = match cfg.fixed_t {
            Some(t) => fixed_commit_counts(open, t),
            None => vec![cfg.q; iteration_count(s.len(), u, cfg.q)],
        };
        s.plan.reverse();
    }
    let mut iteration = 0;
    loop {
        let active: Vec<usize> = (0..slots.len()).filter(|&i| !slots[i].plan.is_empty()).collect();
        if active.is_empty() {
            return Ok(());
        }
        iteration += 1;
        let inputs: Vec<Vec<TokenId>> = active.iter().map(|&i| slots[i].input()).collect();
        let probs = pass(session, memory, &inputs)?;
        for (&i, p) in active.iter().zip(&probs) {
            let s = &mut slots[i];
            let open: Vec<usize> = (0..s.len()).filter(|&n| !s.observed[n]).collect();
            for &n in &open {
                let (w, c) = best_word(&p[n * v..(n + 1) * v]);
                s.tokens[n] = w;
                s.conf[n] = c;
                s.touched.insert(w);
            }
            let k = s.plan.pop().expect("active slot has a plan").min(open.len());
            let chosen: Vec<usize> = match cfg.algorithm {
                Algorithm::L2r => open[..k].to_vec(),
                _ => {
                    let mut by_conf = open.clone();
                    by_conf.sort_by(|&a, &b| s.conf[b].total_cmp(&s.conf[a]).then(a.cmp(&b)));
                    by_conf.truncate(k);
                    by_conf
                }
            };
            for n in chosen {
                s.observed[n] = true;
            }
            s.snapshot(iteration, cfg.trace);
        }
    }
}

/// Re-predicts the template positions conditioned on every other final word;
/// slots without template words are left untouched and cost no pass.
fn refine_visual_words<F: Real>(
    session: &mut Session<'_, F>,
    memory: Var,
    slots: &mut [Slot],
    cfg: &DecodeConfig,
    v: usize,
) -> Result<()> {
    let active: Vec<usize> = (0..slots.len()).filter(|&i| slots[i].visual.iter().any(|&x| x)).collect();
    if active.is_empty() {
        return Ok(());
    }
    let inputs: Vec<Vec<TokenId>> = active
        .iter()
        .map(|&i| {
            let s = &slots[i];
            s.tokens
                .iter()
                .zip(&s.visual)
                .map(|(&t, &vis)| if vis { MASK } else { t })
                .collect()
        })
        .collect();
    let probs = pass(session, memory, &inputs)?;
    for (&i, p) in active.iter().zip(&probs) {
        let s = &mut slots[i];
        let iteration = s.trace.last().map_or(0, |t| t.iteration) + 1;
        for n in 0..s.len() {
            if s.visual[n] {
                let (w, c) = best_word(&p[n * v..(n + 1) * v]);
                s.tokens[n] = w;
                s.conf[n] = c;
                s.touched.insert(w);
            }
        }
        s.snapshot(iteration, cfg.trace);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowest_confidence_ties_mask_higher_positions() {
        assert_eq!(lowest_confidence(&[0.5, 0.1, 0.9, 0.1], 2), vec![1, 3]);
        assert_eq!(lowest_confidence(&[0.5, 0.5, 0.5], 1), vec![2]);
        assert_eq!(lowest_confidence(&[0.5, 0.5], 5), vec![0, 1]);
    }

    #[test]
    fn argmax_tie_breaks() {
        let row = [0.0f64, 0.2, 0.0, 0.0, 0.0, 0.2, 0.2, 0.4];
        assert_eq!(best_word(&row).0, 7);
        let flat = [0.125f64; 8];
        assert_eq!(best_word(&flat).0, NUM_RESERVED);
        assert_eq!(best_template_token(&flat).0, MASK);
    }
}
