use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub passes_mean: f64,
    pub per_example: Vec<f64>,
}

/// Nearest-rank percentile of unsorted samples.
pub fn percentile(samples: &[f64], pct: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((pct / 100.0) * s.len() as f64).ceil() as usize;
    s[rank.clamp(1, s.len()) - 1]
}

impl LatencyStats {
    /// Per-example wall times in milliseconds and decoder pass counts.
    pub fn from_samples(ms: &[f64], passes: &[usize]) -> Result<Self> {
        if ms.is_empty() || ms.len() != passes.len() {
            return Err(Error::EmptyInput);
        }
        let n = ms.len() as f64;
        Ok(LatencyStats {
            mean_ms: ms.iter().sum::<f64>() / n,
            p50_ms: percentile(ms, 50.0),
            p95_ms: percentile(ms, 95.0),
            passes_mean: passes.iter().sum::<usize>() as f64 / n,
            per_example: ms.to_vec(),
        })
    }
}
