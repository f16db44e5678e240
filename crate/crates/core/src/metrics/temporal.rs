//! Timing statistics over a time-ordered commit history.

use crate::extract::CommitMeta;

const SECONDS_PER_HOUR: f64 = 3600.0;
const SECONDS_PER_DAY: i64 = 86_400;

/// Commits per UTC calendar day, from the first commit's day to the last
/// commit's day inclusive. Days without commits are present as zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct BurstinessSeries {
    pub daily_counts: Vec<u64>,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
}

impl BurstinessSeries {
    pub fn from_history(history: &[CommitMeta]) -> Option<Self> {
        let days: Vec<i64> = history
            .iter()
            .map(|c| c.author_time.timestamp().div_euclid(SECONDS_PER_DAY))
            .collect();
        let first = *days.iter().min()?;
        let last = *days.iter().max()?;
        let mut counts = vec![0u64; (last - first + 1) as usize];
        for d in days {
            counts[(d - first) as usize] += 1;
        }
        Some(Self::from_counts(counts))
    }

    pub fn from_counts(daily_counts: Vec<u64>) -> Self {
        let n = daily_counts.len() as f64;
        let mean = daily_counts.iter().sum::<u64>() as f64 / n;
        let variance = daily_counts
            .iter()
            .map(|c| {
                let d = *c as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        Self {
            daily_counts,
            mean,
            variance,
        }
    }

    /// Variance-to-mean ratio; zero for an all-zero series.
    pub fn dispersion(&self) -> f64 {
        if self.mean > 0.0 {
            self.variance / self.mean
        } else {
            0.0
        }
    }
}

/// Index of dispersion of a daily count series.
pub fn dispersion_index(daily_counts: &[u64]) -> f64 {
    if daily_counts.is_empty() {
        return 0.0;
    }
    BurstinessSeries::from_counts(daily_counts.to_vec()).dispersion()
}

/// Index of dispersion of commits per day. Defined as 0 for a single commit.
pub fn burstiness(history: &[CommitMeta]) -> f64 {
    if history.len() < 2 {
        return 0.0;
    }
    BurstinessSeries::from_history(history).map_or(0.0, |s| s.dispersion())
}

/// Sum of the gaps between successive commits, in whole seconds. Equals
/// the span from first to last commit.
pub fn total_gap_seconds(history: &[CommitMeta]) -> i64 {
    history
        .windows(2)
        .map(|w| (w[1].author_time - w[0].author_time).num_seconds())
        .sum()
}

/// Mean gap between successive commits, in hours. Absent below two commits.
pub fn mean_interevent(history: &[CommitMeta]) -> Option<f64> {
    if history.len() < 2 {
        return None;
    }
    let gaps = (history.len() - 1) as f64;
    Some(total_gap_seconds(history) as f64 / SECONDS_PER_HOUR / gaps)
}

/// Hours between first and last commit.
pub fn repo_age(history: &[CommitMeta]) -> f64 {
    match (history.first(), history.last()) {
        (Some(a), Some(b)) => (b.author_time - a.author_time).num_seconds() as f64 / SECONDS_PER_HOUR,
        _ => 0.0,
    }
}
