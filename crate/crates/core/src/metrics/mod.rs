//! Caption quality, diversity and latency measurement.

pub mod bleu;
pub mod cider;
pub mod diversity;
pub mod latency;
pub mod rouge;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use bleu::{bleu, ngram_precisions};
pub use cider::{cider_d, cider_d_scores};
pub use diversity::{diversity, per_position_vocab_usage, unique_ngrams_by_category, Diversity};
pub use latency::{percentile, LatencyStats};
pub use rouge::{lcs_len, rouge_l, rouge_l_pair};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: Vec<f64>,
    pub meteor: String,
    pub rouge_l: f64,
    pub cider_d: f64,
    pub novel_pct: f64,
    pub unique_pct: f64,
    pub vocab_usage_pct: f64,
    pub coverage_at: BTreeMap<usize, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub latency: Option<LatencyStats>,
}

impl MetricReport {
    pub fn quality<T: Ord + Clone>(hypotheses: &[Vec<T>], references: &[Vec<Vec<T>>], div: Diversity) -> Result<Self> {
        Ok(MetricReport {
            bleu: bleu(hypotheses, references, 4)?,
            meteor: "n/a".into(),
            rouge_l: rouge_l(hypotheses, references)?,
            cider_d: cider_d(hypotheses, references)?,
            novel_pct: div.novel_pct,
            unique_pct: div.unique_pct,
            vocab_usage_pct: div.vocab_usage_pct,
            coverage_at: div.coverage_at,
            latency: None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat `metric,value` rows; per-example latencies are omitted.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (i, b) in self.bleu.iter().enumerate() {
            writeln!(out, "bleu{},{b}", i + 1).unwrap();
        }
        writeln!(out, "meteor,{}", self.meteor).unwrap();
        writeln!(out, "rouge_l,{}", self.rouge_l).unwrap();
        writeln!(out, "cider_d,{}", self.cider_d).unwrap();
        writeln!(out, "novel_pct,{}", self.novel_pct).unwrap();
        writeln!(out, "unique_pct,{}", self.unique_pct).unwrap();
        writeln!(out, "vocab_usage_pct,{}", self.vocab_usage_pct).unwrap();
        for (k, v) in &self.coverage_at {
            writeln!(out, "coverage@{k},{v}").unwrap();
        }
        if let Some(l) = &self.latency {
            writeln!(out, "mean_ms,{}", l.mean_ms).unwrap();
            writeln!(out, "p50_ms,{}", l.p50_ms).unwrap();
            writeln!(out, "p95_ms,{}", l.p95_ms).unwrap();
            writeln!(out, "passes_mean,{}", l.passes_mean).unwrap();
        }
        out
    }
}
