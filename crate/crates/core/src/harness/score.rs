//! Normalized improvement scores and their cross-environment summary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean, median};

/// Published Atari-scale mean and median normalized scores, kept for
/// reference in reports. Desk-scale runs do not reproduce them.
pub const ATARI_REFERENCE_SVR_DQN: ScoreSummary = ScoreSummary {
    mean: 139.75,
    median: 118.02,
    environments: 20,
};
pub const ATARI_REFERENCE_DOUBLE_DQN: ScoreSummary = ScoreSummary {
    mean: 92.48,
    median: 63.13,
    environments: 20,
};

/// `100 * (agent - random) / |baseline - random|`.
pub fn normalized_score(agent: f64, random_score: f64, baseline: f64) -> Result<f64> {
    let denom = (baseline - random_score).abs();
    if !(denom > 0.0 && denom.is_finite()) || !agent.is_finite() {
        return Err(Error::UndefinedScore(denom));
    }
    Ok(100.0 * (agent - random_score) / denom)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub mean: f64,
    pub median: f64,
    pub environments: usize,
}

/// Mean and median of per-environment normalized scores.
pub fn summarize(scores: &[f64]) -> Result<ScoreSummary> {
    let (Some(mean), Some(median)) = (mean(scores), median(scores)) else {
        return Err(Error::InvalidArgument("no scores to summarize".into()));
    };
    Ok(ScoreSummary {
        mean,
        median,
        environments: scores.len(),
    })
}
