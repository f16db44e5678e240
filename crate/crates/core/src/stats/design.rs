//! Regression design matrix built from per-repository metrics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::CorpusMetrics;

pub const BASELINE_LANGUAGE: &str = "JavaScript";
pub const BOURNE_MERGED: &str = "Bourne (Again) Shell";
pub const OTHER_LANGUAGE: &str = "OTHER";
pub const LANGUAGE_PREFIX: &str = "lang:";

/// Numeric features, in column order.
pub const FEATURES: [&str; 10] = [
    "files",
    "contributors",
    "commits",
    "branches",
    "avg_message_length",
    "avg_editors_per_file",
    "avg_interevent_hours",
    "lead_workload",
    "effective_team_size",
    "burstiness",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignOptions {
    /// Rows from this corpus have outcome 1; all others 0.
    pub positive_corpus: String,
    pub include_language: bool,
    /// Languages seen in fewer repositories than this are grouped as OTHER.
    pub rare_language_threshold: usize,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            positive_corpus: "penumbra".into(),
            include_language: false,
            rare_language_threshold: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DesignError {
    #[error("no rows of corpus {0:?} survive listwise deletion")]
    EmptyCorpus(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeletionCensus {
    pub input_rows: usize,
    pub dropped_rows: usize,
    /// Missing-cell counts per field, over all input rows.
    pub missing_by_field: BTreeMap<String, usize>,
    pub surviving_by_corpus: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    /// Feature columns (no intercept).
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub outcome: Vec<f64>,
    pub repo_ids: Vec<String>,
    /// Grouped language label per row, when languages are included.
    pub languages: Vec<String>,
    pub census: DeletionCensus,
}

impl DesignMatrix {
    /// Recover the grouped language of a row from its indicator columns.
    pub fn language_of(&self, row: usize) -> Option<String> {
        let first = self.columns.iter().position(|c| c.starts_with(LANGUAGE_PREFIX))?;
        let hit = (first..self.columns.len()).find(|j| self.rows[row][*j] == 1.0);
        Some(match hit {
            Some(j) => self.columns[j][LANGUAGE_PREFIX.len()..].to_string(),
            None => BASELINE_LANGUAGE.to_string(),
        })
    }
}

pub fn merge_bourne(language: &str) -> &str {
    match language {
        "Bourne Shell" | "Bourne Again Shell" => BOURNE_MERGED,
        other => other,
    }
}

fn numeric_row(m: &crate::metrics::RepoMetrics) -> [Option<f64>; 10] {
    [
        Some(m.files as f64),
        Some(m.committers as f64),
        Some(m.commits as f64),
        Some(m.branches as f64),
        Some(m.avg_message_length),
        m.avg_editors_per_file,
        m.mean_interevent_hours,
        Some(m.lead_workload),
        Some(m.effective_team_size),
        Some(m.burstiness),
    ]
}

/// Listwise deletion, then optional language dummies with JavaScript as the
/// omitted baseline. The language used is the top language by lines of code.
pub fn build_design_matrix(data: &[CorpusMetrics], opts: &DesignOptions) -> Result<DesignMatrix, DesignError> {
    let mut census = DeletionCensus {
        input_rows: data.len(),
        ..Default::default()
    };
    let mut kept: Vec<(&CorpusMetrics, [f64; 10], Option<&str>)> = Vec::new();
    for r in data {
        let nums = numeric_row(&r.metrics);
        let mut missing = false;
        for (name, v) in FEATURES.iter().zip(&nums) {
            if v.is_none() {
                *census.missing_by_field.entry(name.to_string()).or_default() += 1;
                missing = true;
            }
        }
        let lang = r.metrics.top_language_by_loc.as_deref().map(merge_bourne);
        if opts.include_language && lang.is_none() {
            *census.missing_by_field.entry("top_language".into()).or_default() += 1;
            missing = true;
        }
        if missing {
            census.dropped_rows += 1;
            continue;
        }
        kept.push((r, nums.map(|v| v.expect("checked")), lang));
    }

    let corpora: BTreeSet<&str> = data.iter().map(|r| r.corpus.as_str()).collect();
    for c in &corpora {
        census.surviving_by_corpus.insert(c.to_string(), 0);
    }
    for (r, _, _) in &kept {
        *census.surviving_by_corpus.get_mut(r.corpus.as_str()).expect("seeded") += 1;
    }
    if let Some((c, _)) = census.surviving_by_corpus.iter().find(|(_, n)| **n == 0) {
        return Err(DesignError::EmptyCorpus(c.clone()));
    }

    let mut columns: Vec<String> = FEATURES.iter().map(|s| s.to_string()).collect();
    let mut grouped: Vec<String> = Vec::new();
    if opts.include_language {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (_, _, l) in &kept {
            *counts.entry(l.expect("checked")).or_default() += 1;
        }
        let group = |l: &str| -> String {
            if l == BASELINE_LANGUAGE || counts[l] >= opts.rare_language_threshold {
                l.to_string()
            } else {
                OTHER_LANGUAGE.to_string()
            }
        };
        grouped = kept.iter().map(|(_, _, l)| group(l.expect("checked"))).collect();
        let mut categories: Vec<String> = grouped
            .iter()
            .filter(|g| *g != BASELINE_LANGUAGE && *g != OTHER_LANGUAGE)
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if grouped.iter().any(|g| g == OTHER_LANGUAGE) {
            categories.push(OTHER_LANGUAGE.to_string());
        }
        columns.extend(categories.iter().map(|c| format!("{LANGUAGE_PREFIX}{c}")));
    }

    let mut rows = Vec::with_capacity(kept.len());
    for (i, (_, nums, _)) in kept.iter().enumerate() {
        let mut row = nums.to_vec();
        if opts.include_language {
            for c in &columns[FEATURES.len()..] {
                row.push(if c[LANGUAGE_PREFIX.len()..] == grouped[i] { 1.0 } else { 0.0 });
            }
        }
        rows.push(row);
    }
    Ok(DesignMatrix {
        columns,
        rows,
        outcome: kept
            .iter()
            .map(|(r, _, _)| if r.corpus == opts.positive_corpus { 1.0 } else { 0.0 })
            .collect(),
        repo_ids: kept.iter().map(|(r, _, _)| r.metrics.repo_id.clone()).collect(),
        languages: grouped,
        census,
    })
}
