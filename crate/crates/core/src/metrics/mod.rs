//! The per-repository statistic vector.

pub mod languages;
pub mod team;
pub mod temporal;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{CommitMeta, RepoSnapshot};
pub use languages::{top_language, LanguageCount, LanguageMeasure, LanguageTally};
pub use team::{effective_team_size, is_dominated, lead_workload, DistributionError, WorkDistribution};
pub use temporal::{burstiness, dispersion_index, mean_interevent, repo_age, BurstinessSeries};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("repository {0} has an empty history")]
    EmptyHistory(String),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepoMetrics {
    pub repo_id: String,
    pub files: u64,
    pub committers: u64,
    pub commits: u64,
    pub branches: u64,
    pub avg_message_length: f64,
    pub avg_editors_per_file: Option<f64>,
    pub mean_interevent_hours: Option<f64>,
    pub burstiness: f64,
    pub age_hours: f64,
    pub lead_workload: f64,
    pub dominated: bool,
    pub effective_team_size: f64,
    pub top_language_by_loc: Option<String>,
    pub top_language_by_files: Option<String>,
}

/// Mean number of distinct authors per head file, over head files touched
/// by at least one commit.
pub fn editors_per_file(history: &[CommitMeta], head_paths: &[String]) -> Option<f64> {
    let mut editors: BTreeMap<&str, BTreeSet<&str>> =
        head_paths.iter().map(|p| (p.as_str(), BTreeSet::new())).collect();
    for c in history {
        for p in &c.changed_paths {
            if let Some(set) = editors.get_mut(p.as_str()) {
                set.insert(c.author_email.as_str());
            }
        }
    }
    let touched: Vec<usize> = editors.values().map(BTreeSet::len).filter(|n| *n > 0).collect();
    if touched.is_empty() {
        return None;
    }
    Some(touched.iter().sum::<usize>() as f64 / touched.len() as f64)
}

fn mean_message_length(history: &[CommitMeta]) -> f64 {
    history.iter().map(|c| c.message_length as u64).sum::<u64>() as f64 / history.len() as f64
}

/// Assemble every field for one repository. `history` must be time-ordered.
pub fn compute_repo_metrics(
    history: &[CommitMeta],
    snapshot: &RepoSnapshot,
    tally: &LanguageTally,
) -> Result<RepoMetrics, MetricsError> {
    if history.is_empty() {
        return Err(MetricsError::EmptyHistory(snapshot.repo_id.clone()));
    }
    let dist = WorkDistribution::from_history(history)?;
    Ok(RepoMetrics {
        repo_id: snapshot.repo_id.clone(),
        files: snapshot.head_paths.len() as u64,
        committers: dist.contributors() as u64,
        commits: history.len() as u64,
        branches: snapshot.remote_branch_count as u64,
        avg_message_length: mean_message_length(history),
        avg_editors_per_file: editors_per_file(history, &snapshot.head_paths),
        mean_interevent_hours: mean_interevent(history),
        burstiness: burstiness(history),
        age_hours: repo_age(history),
        lead_workload: lead_workload(&dist),
        dominated: is_dominated(&dist),
        effective_team_size: effective_team_size(&dist),
        top_language_by_loc: top_language(tally, LanguageMeasure::Loc),
        top_language_by_files: top_language(tally, LanguageMeasure::Files),
    })
}

/// Column order of the flat CSV export.
pub const CSV_COLUMNS: [&str; 16] = [
    "corpus",
    "repo_id",
    "files",
    "committers",
    "commits",
    "branches",
    "avg_message_length",
    "avg_editors_per_file",
    "mean_interevent_hours",
    "burstiness",
    "age_hours",
    "lead_workload",
    "dominated",
    "effective_team_size",
    "top_language_by_loc",
    "top_language_by_files",
];

/// A metrics row tagged with the corpus it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetrics {
    pub corpus: String,
    #[serde(flatten)]
    pub metrics: RepoMetrics,
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write rows as CSV with `CSV_COLUMNS` as the header. Absent values are
/// empty cells.
pub fn write_metrics_csv<W: Write>(out: W, rows: &[CorpusMetrics]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.corpus.clone(),
            m.repo_id.clone(),
            m.files.to_string(),
            m.committers.to_string(),
            m.commits.to_string(),
            m.branches.to_string(),
            m.avg_message_length.to_string(),
            opt_f64(m.avg_editors_per_file),
            opt_f64(m.mean_interevent_hours),
            m.burstiness.to_string(),
            m.age_hours.to_string(),
            m.lead_workload.to_string(),
            m.dominated.to_string(),
            m.effective_team_size.to_string(),
            m.top_language_by_loc.clone().unwrap_or_default(),
            m.top_language_by_files.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_csv_file(path: &Path, rows: &[CorpusMetrics]) -> csv::Result<()> {
    write_metrics_csv(std::fs::File::create(path)?, rows)
}

/// Distinct author emails in a history.
pub fn unique_emails(history: &[CommitMeta]) -> HashSet<String> {
    history.iter().map(|c| c.author_email.clone()).collect()
}
