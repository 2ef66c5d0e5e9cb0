//! Token and call accounting over trace records.

use serde::{Deserialize, Serialize};

use crate::state::TraceRecord;

/// Whether cache hits count toward spend.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// Cache hits count their original tokens, so a warm cache does not change
    /// reported cost.
    #[default]
    IncludeCacheHits,
    /// Only tokens actually spent in this run.
    FreshOnly,
}

/// Unit used for normalized cost. Tokens is the default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostBasis {
    #[default]
    Tokens,
    Calls,
    LatencyMs,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostSummary {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub calls: u64,
    pub cache_hits: u64,
    #[serde(default)]
    pub latency_ms: u64,
}

impl CostSummary {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn amount(&self, basis: CostBasis) -> u64 {
        match basis {
            CostBasis::Tokens => self.total_tokens(),
            CostBasis::Calls => self.calls,
            CostBasis::LatencyMs => self.latency_ms,
        }
    }
}

pub fn cost_summary(records: &[TraceRecord], mode: CostMode) -> CostSummary {
    let mut out = CostSummary::default();
    for call in records.iter().flat_map(|r| r.model_calls.iter()) {
        out.calls += 1;
        out.latency_ms += call.latency_ms;
        if call.cache_hit {
            out.cache_hits += 1;
            if mode == CostMode::FreshOnly {
                continue;
            }
        }
        out.prompt_tokens += call.prompt_tokens;
        out.completion_tokens += call.completion_tokens;
    }
    out
}
