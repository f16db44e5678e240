//! How work is spread across a repository's contributors.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::extract::CommitMeta;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DistributionError {
    #[error("work distribution needs at least one contributor")]
    Empty,
    #[error("contributor {0:?} has zero commits")]
    ZeroCount(String),
}

/// Commit counts per contributor (keyed by email).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkDistribution {
    counts: BTreeMap<String, u64>,
    total: u64,
}

impl WorkDistribution {
    pub fn new(counts: BTreeMap<String, u64>) -> Result<Self, DistributionError> {
        if counts.is_empty() {
            return Err(DistributionError::Empty);
        }
        if let Some((who, _)) = counts.iter().find(|(_, c)| **c == 0) {
            return Err(DistributionError::ZeroCount(who.clone()));
        }
        let total = counts.values().sum();
        Ok(Self { counts, total })
    }

    /// Anonymous contributors from a list of counts, named `c0`, `c1`, ...
    pub fn from_counts(counts: &[u64]) -> Result<Self, DistributionError> {
        Self::new(
            counts
                .iter()
                .enumerate()
                .map(|(i, c)| (format!("c{i}"), *c))
                .collect(),
        )
    }

    pub fn from_history(history: &[CommitMeta]) -> Result<Self, DistributionError> {
        Self::new(crate::extract::commits_per_author(history))
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    /// W, the total number of commits.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// M, the number of contributors.
    pub fn contributors(&self) -> usize {
        self.counts.len()
    }

    pub fn fractions(&self) -> impl Iterator<Item = f64> + '_ {
        let w = self.total as f64;
        self.counts.values().map(move |c| *c as f64 / w)
    }

    fn max_count(&self) -> u64 {
        self.counts.values().copied().max().unwrap_or(0)
    }
}

/// Shannon entropy of the work fractions, in bits.
pub fn work_entropy_bits(dist: &WorkDistribution) -> f64 {
    -dist.fractions().map(|f| f * f.log2()).sum::<f64>()
}

/// `2^h`: the number of equally contributing members that would produce the
/// same entropy. Clamped to `[1, M]` against rounding.
pub fn effective_team_size(dist: &WorkDistribution) -> f64 {
    let m = work_entropy_bits(dist).exp2();
    m.clamp(1.0, dist.contributors() as f64)
}

/// Largest commit fraction held by one contributor.
pub fn lead_workload(dist: &WorkDistribution) -> f64 {
    dist.max_count() as f64 / dist.total as f64
}

/// True when the lead made strictly more commits than everybody else
/// combined. A single contributor always dominates.
pub fn is_dominated(dist: &WorkDistribution) -> bool {
    let lead = dist.max_count();
    lead > dist.total - lead
}
