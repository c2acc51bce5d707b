//! Loss functions. The plain versions work on probability tables and serve as
//! reference implementations; [`example_loss`] builds the same objective on the
//! tape for training.

use super::masking::MaskedExample;
use crate::corpus::vocab::{TokenId, BOS, EOS, VISUAL};
use crate::error::{Error, Result};
use crate::model::{Session, VideoFeatures};
use crate::numerics::{Real, Tensor, Var};

const SUM_TOL: f64 = 1e-4;

fn check_distribution(p: &[f64]) -> Result<()> {
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SUM_TOL || p.iter().any(|&x| x < 0.0) {
        return Err(Error::NotADistribution(s));
    }
    Ok(())
}

/// `D_KL(target ‖ predicted)` over caption lengths, with `0·log 0 = 0`.
pub fn loss_len(predicted: &[f64], target: &[f64]) -> Result<f64> {
    check_distribution(predicted)?;
    check_distribution(target)?;
    if predicted.len() != target.len() {
        return Err(Error::shape("loss_len", format!("{} vs {}", predicted.len(), target.len())));
    }
    Ok(target
        .iter()
        .zip(predicted)
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, &p)| t * (t / p).ln())
        .sum())
}

fn nll_at<F: Real>(probs: &Tensor<F>, row: usize, class: TokenId) -> Result<f64> {
    let (rows, cols) = probs.dims2();
    if class >= cols {
        return Err(Error::IndexOutOfVocab { id: class, size: cols });
    }
    if row >= rows {
        return Err(Error::shape("nll", format!("row {row} of {rows}")));
    }
    Ok(-probs.row(row)[class].f64().ln())
}

/// Mean negative log-likelihood of the masked reference words.
pub fn loss_mlm<F: Real>(probs: &Tensor<F>, example: &MaskedExample) -> Result<f64> {
    let mut total = 0.0;
    for i in example.masked_positions() {
        total += nll_at(probs, i, example.y_star[i])?;
    }
    Ok(total / example.mask_count().max(1) as f64)
}

/// Mean negative log-likelihood of the visual-word target at every position.
pub fn loss_vis<F: Real>(probs: &Tensor<F>, y_vis: &[TokenId]) -> Result<f64> {
    let mut total = 0.0;
    for (i, &y) in y_vis.iter().enumerate() {
        total += nll_at(probs, i, y)?;
    }
    Ok(total / y_vis.len().max(1) as f64)
}

pub fn loss_total(len: f64, mlm: f64, vis: f64, lambda_vis: f64) -> f64 {
    len + mlm + lambda_vis * vis
}

/// What one video-caption pair contributes to a training step.
#[derive(Clone, Debug, PartialEq)]
pub enum ExampleTarget {
    /// Masked-word reconstruction for the bidirectional model.
    Masked(MaskedExample),
    /// Next-word prediction for the causal model.
    NextWord(Vec<TokenId>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExamplePlan {
    pub target: ExampleTarget,
    /// Visual-word target fed with an all-`[visual]` input.
    pub visual: Option<Vec<TokenId>>,
    /// Reference length distribution; bidirectional model only.
    pub length: Option<Vec<f64>>,
}

impl ExamplePlan {
    /// Positions contributing to the word loss.
    pub fn word_count(&self) -> usize {
        match &self.target {
            ExampleTarget::Masked(m) => m.mask_count(),
            ExampleTarget::NextWord(y) => y.len() + 1,
        }
    }

    pub fn visual_count(&self) -> usize {
        self.visual.as_ref().map_or(0, Vec::len)
    }
}

/// Normalizers turning per-example sums into batch means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossScale {
    pub len: f64,
    pub word: f64,
    pub vis: f64,
}

impl LossScale {
    /// Means over the batch: lengths per example, words per scored position,
    /// visual words per position and weighted by `lambda_vis`.
    pub fn for_batch(plans: &[&ExamplePlan], lambda_vis: f64) -> Self {
        let words: usize = plans.iter().map(|p| p.word_count()).sum();
        let vis: usize = plans.iter().map(|p| p.visual_count()).sum();
        let lens = plans.iter().filter(|p| p.length.is_some()).count();
        let inv = |n: usize| if n == 0 { 0.0 } else { 1.0 / n as f64 };
        LossScale {
            len: inv(lens),
            word: inv(words),
            vis: lambda_vis * inv(vis),
        }
    }
}

/// Unscaled per-example sums of the three terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub len: f64,
    pub word: f64,
    pub vis: f64,
}

/// Builds the scaled training objective of one example on the session tape.
pub fn example_loss<F: Real>(
    session: &mut Session<'_, F>,
    features: &VideoFeatures,
    plan: &ExamplePlan,
    scale: &LossScale,
) -> Result<(Var, LossParts)> {
    let memory = session.encode(features)?;
    let word_input: Vec<TokenId> = match &plan.target {
        ExampleTarget::Masked(m) => m.input(),
        ExampleTarget::NextWord(y) => std::iter::once(BOS).chain(y.iter().copied()).collect(),
    };
    let vis_input = plan.visual.as_ref().map(|v| vec![VISUAL; v.len()]);
    let mut segments: Vec<&[TokenId]> = vec![&word_input];
    if let Some(v) = &vis_input {
        segments.push(v);
    }
    let logits = session.decode(memory, &segments)?;

    let one = F::one();
    let word_targets: Vec<(usize, usize, F)> = match &plan.target {
        ExampleTarget::Masked(m) => m.masked_positions().map(|i| (i, m.y_star[i], one)).collect(),
        ExampleTarget::NextWord(y) => y.iter().copied().chain([EOS]).enumerate().map(|(i, t)| (i, t, one)).collect(),
    };
    let word = session.tape.cross_entropy(logits, &word_targets)?;
    let mut parts = LossParts {
        word: session.tape.scalar(word).f64(),
        ..LossParts::default()
    };
    let mut total = session.tape.scale(word, F::lit(scale.word))?;

    if let Some(v) = &plan.visual {
        let off = word_input.len();
        let targets: Vec<(usize, usize, F)> = v.iter().enumerate().map(|(i, &t)| (off + i, t, one)).collect();
        let vis = session.tape.cross_entropy(logits, &targets)?;
        parts.vis = session.tape.scalar(vis).f64();
        let scaled = session.tape.scale(vis, F::lit(scale.vis))?;
        total = session.tape.add(total, scaled)?;
    }
    if let Some(l) = &plan.length {
        let logits = session.length_logits(memory)?;
        let target: Vec<F> = l.iter().map(|&x| F::lit(x)).collect();
        let kl = session.tape.kl_div(logits, &target)?;
        parts.len = session.tape.scalar(kl).f64();
        let scaled = session.tape.scale(kl, F::lit(scale.len))?;
        total = session.tape.add(total, scaled)?;
    }
    Ok((total, parts))
}
