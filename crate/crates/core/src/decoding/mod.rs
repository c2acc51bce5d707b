//! Coarse-to-fine inference: template generation, iterative refinement,
//! length beam, teacher rescoring and the autoregressive baseline.

pub mod autoregressive;
pub mod iterative;
pub mod rescoring;
pub mod schedule;
pub mod trace;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::TokenId;
use crate::error::{Error, Result};
use crate::model::{Network, VideoFeatures};
use crate::numerics::Real;

pub use autoregressive::{ar_decode, ArConfig, ArOutput};
pub use iterative::{init_observed, Candidate, Snapshot, Start};
pub use rescoring::{select_best, teacher_rescore};
pub use schedule::{iteration_count, length_beam, mask_count};

/// Shortest caption the length beam considers.
pub const MIN_LEN: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Mp,
    Ef,
    L2r,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Mp => "mp",
            Algorithm::Ef => "ef",
            Algorithm::L2r => "l2r",
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mp" => Ok(Algorithm::Mp),
            "ef" => Ok(Algorithm::Ef),
            "l2r" => Ok(Algorithm::L2r),
            _ => Err(Error::Config(format!("unknown algorithm {s:?}"))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub algorithm: Algorithm,
    /// Start from the visual-word template (CT- variants).
    pub use_template: bool,
    /// Mask-predict iterations.
    #[serde(rename = "T")]
    pub t: usize,
    /// Tokens committed per easy-first / left-to-right iteration.
    pub q: usize,
    /// Length beam size.
    #[serde(rename = "B")]
    pub b: usize,
    pub rescore: bool,
    /// Re-predict template words once more after easy-first / left-to-right.
    pub refine_visual: bool,
    /// Constant iteration budget for easy-first / left-to-right.
    pub fixed_t: Option<usize>,
    /// Keep per-iteration snapshots.
    pub trace: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            algorithm: Algorithm::Mp,
            use_template: true,
            t: 5,
            q: 1,
            b: 6,
            rescore: false,
            refine_visual: true,
            fixed_t: None,
            trace: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.q == 0 || self.b == 0 || self.fixed_t == Some(0) {
            return Err(Error::Config("T, q, B and fixed_t must be at least 1".into()));
        }
        Ok(())
    }

    /// Short label such as `CT-MP(B=6,T=5)+R`.
    pub fn label(&self) -> String {
        let algo = self.algorithm.as_str().to_uppercase();
        let prefix = if self.use_template { "CT-" } else { "" };
        let iters = match (self.algorithm, self.fixed_t) {
            (Algorithm::Mp, _) => format!("T={}", self.t),
            (_, Some(t)) => format!("q={},T={t}", self.q),
            (_, None) => format!("q={}", self.q),
        };
        let r = if self.rescore { "+R" } else { "" };
        format!("{prefix}{algo}(B={},{iters}){r}", self.b)
    }
}

/// Decoder passes the configuration needs for candidates of lengths `n_b`
/// whose templates fixed `u_b` words.
pub fn expected_passes(cfg: &DecodeConfig, lengths_and_visual: &[(usize, usize)]) -> usize {
    let template = usize::from(cfg.use_template);
    let teacher = usize::from(cfg.rescore);
    let body = match cfg.algorithm {
        Algorithm::Mp => cfg.t,
        Algorithm::Ef | Algorithm::L2r => {
            let iters = lengths_and_visual
                .iter()
                .map(|&(n, u)| match cfg.fixed_t {
                    Some(t) => schedule::fixed_commit_counts(n - u, t).len(),
                    None => iteration_count(n, u, cfg.q),
                })
                .max()
                .unwrap_or(0);
            let refine = cfg.use_template && cfg.refine_visual && lengths_and_visual.iter().any(|&(_, u)| u > 0);
            iters + usize::from(refine)
        }
    };
    template + body + teacher
}

/// Result of captioning one video.
#[derive(Clone, Debug)]
pub struct CaptionOutput {
    pub tokens: Vec<TokenId>,
    pub score: f64,
    /// Candidates in length-beam order.
    pub candidates: Vec<Candidate>,
    pub best: usize,
    /// Decoder forward passes, teacher pass included.
    pub passes: usize,
    pub encode_ms: f64,
    pub wall_ms: f64,
}

impl CaptionOutput {
    /// Words touched while decoding the selected candidate and the next
    /// `k - 1` best-scoring ones.
    pub fn coverage(&self, k: usize) -> BTreeSet<TokenId> {
        let mut order: Vec<usize> = (0..self.candidates.len()).collect();
        order.sort_by(|&a, &b| {
            (b == self.best)
                .cmp(&(a == self.best))
                .then(self.candidates[b].score.total_cmp(&self.candidates[a].score))
                .then(a.cmp(&b))
        });
        order
            .into_iter()
            .take(k)
            .flat_map(|i| self.candidates[i].touched.iter().copied())
            .collect()
    }
}

/// Full two-stage captioning of one video: encode, predict lengths, decode the
/// length beam in parallel, optionally rescore with `teacher`, select.
pub fn caption<F: Real>(
    model: &Network<F>,
    teacher: Option<&Network<F>>,
    features: &VideoFeatures,
    cfg: &DecodeConfig,
) -> Result<CaptionOutput> {
    caption_impl(model, teacher, features, cfg, None)
}

/// Like [`caption`] but decodes exactly the given lengths instead of the
/// predicted length beam.
pub fn caption_at_lengths<F: Real>(
    model: &Network<F>,
    teacher: Option<&Network<F>>,
    features: &VideoFeatures,
    cfg: &DecodeConfig,
    lengths: &[usize],
) -> Result<CaptionOutput> {
    caption_impl(model, teacher, features, cfg, Some(lengths))
}

fn caption_impl<F: Real>(
    model: &Network<F>,
    teacher: Option<&Network<F>>,
    features: &VideoFeatures,
    cfg: &DecodeConfig,
    lengths: Option<&[usize]>,
) -> Result<CaptionOutput> {
    cfg.validate()?;
    if model.config().causal {
        return Err(Error::Config("iterative decoding needs a bidirectional model".into()));
    }
    let teacher = match (cfg.rescore, teacher) {
        (true, None) => return Err(Error::Config("rescoring requires a teacher model".into())),
        (true, Some(t)) if !t.config().causal => {
            return Err(Error::Config("the rescoring teacher must be an autoregressive model".into()))
        }
        (true, t) => t,
        (false, _) => None,
    };
    let start = Instant::now();
    let mut session = model.session();
    let memory = session.encode(features)?;
    let encode_ms = start.elapsed().as_secs_f64() * 1e3;
    let lengths = match lengths {
        Some(l) => l.to_vec(),
        None => {
            let probs: Vec<f64> = session.predict_length(memory)?.into_iter().map(Real::f64).collect();
            length_beam(&probs, cfg.b, MIN_LEN)
        }
    };
    let max = model.config().max_len;
    for &n in &lengths {
        if !(MIN_LEN..=max).contains(&n) {
            return Err(Error::LengthOutOfRange { len: n, min: MIN_LEN, max });
        }
    }
    let mut candidates = iterative::run(&mut session, memory, &lengths, cfg)?;
    let mut passes = session.passes();
    if let Some(t) = teacher {
        let seqs: Vec<&[TokenId]> = candidates.iter().map(|c| c.tokens.as_slice()).collect();
        let mut ts = t.session();
        let z = rescoring::teacher_rescore_batch(&mut ts, features, &seqs)?;
        passes += ts.passes();
        for (c, z) in candidates.iter_mut().zip(z) {
            c.teacher = Some(z);
        }
    }
    for c in &mut candidates {
        c.score = rescoring::candidate_score(&c.confidence, c.teacher.as_deref());
    }
    let best = select_best(&candidates);
    Ok(CaptionOutput {
        tokens: candidates[best].tokens.clone(),
        score: candidates[best].score,
        candidates,
        best,
        passes,
        encode_ms,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
