//! Stage orchestration over a corpus store.
//!
//! Stages run in a fixed order. Each one reads only what earlier stages
//! wrote, and the manifest records the configuration hash and seed it ran
//! under so later stages can refuse stale inputs.

pub mod comparison;
pub mod config;
pub mod report;
mod stages;
pub mod store;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::HttpFetcher;
use crate::label::{Resolver, SystemResolver};
pub use comparison::{build_comparison_plan, ingest_comparison_corpus, ComparisonPlan, ComparisonSample};
pub use config::{Config, ConfigError};
pub use store::{CorpusStore, Manifest, StageMarker, StoreError};

/// Corpus name of the self-hosted repositories.
pub const REFERENCE_CORPUS: &str = "penumbra";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Scan,
    Probe,
    Crawl,
    Clone,
    Extract,
    Metrics,
    Dedup,
    Label,
    Stats,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Scan,
        Stage::Probe,
        Stage::Crawl,
        Stage::Clone,
        Stage::Extract,
        Stage::Metrics,
        Stage::Dedup,
        Stage::Label,
        Stage::Stats,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Scan => "scan",
            Stage::Probe => "probe",
            Stage::Crawl => "crawl",
            Stage::Clone => "clone",
            Stage::Extract => "extract",
            Stage::Metrics => "metrics",
            Stage::Dedup => "dedup",
            Stage::Label => "label",
            Stage::Stats => "stats",
            Stage::Report => "report",
        }
    }

    /// Every stage that must have completed first.
    pub fn upstream(self) -> &'static [Stage] {
        let i = Stage::ALL.iter().position(|s| *s == self).expect("listed");
        &Stage::ALL[..i]
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot run {stage}: upstream stage {missing} has not completed")]
    UpstreamIncomplete { stage: Stage, missing: Stage },
    #[error("cannot run {stage}: {upstream} ran under a different configuration or seed; rerun it or pass --force")]
    ConfigDrift { stage: Stage, upstream: Stage },
    #[error("{stage}: {message}")]
    Stage { stage: Stage, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", content = "summary", rename_all = "snake_case")]
pub enum StageStatus {
    Ran(serde_json::Value),
    /// Already complete under the same configuration; nothing was done.
    UpToDate,
}

pub struct Pipeline {
    store: CorpusStore,
    config: Config,
    fetcher: Arc<dyn HttpFetcher>,
    resolver: Arc<dyn Resolver>,
    force: bool,
    host_filter: Option<PathBuf>,
}

impl Pipeline {
    pub fn new(store: CorpusStore, config: Config, fetcher: Arc<dyn HttpFetcher>) -> Self {
        Self {
            store,
            config,
            fetcher,
            resolver: Arc::new(SystemResolver),
            force: false,
            host_filter: None,
        }
    }

    pub fn with_resolver(mut self, resolver: Arc<dyn Resolver>) -> Self {
        self.resolver = resolver;
        self
    }

    /// Run even when upstream stages ran under another configuration, and
    /// rerun stages that are already complete.
    pub fn with_force(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    /// Restrict crawling to the hosts listed in this file.
    pub fn with_host_filter(mut self, path: Option<PathBuf>) -> Self {
        self.host_filter = path;
        self
    }

    pub fn store(&self) -> &CorpusStore {
        &self.store
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn run_stage(&self, stage: Stage) -> Result<StageStatus, PipelineError> {
        let hash = self.config.result_hash();
        let seed = self.config.seed;
        let manifest = self.store.manifest()?;
        let current = |m: &StageMarker| m.config_hash == hash && m.seed == seed;
        for up in stage.upstream() {
            match manifest.stages.get(up.name()) {
                None => {
                    return Err(PipelineError::UpstreamIncomplete {
                        stage,
                        missing: *up,
                    })
                }
                Some(m) if !current(m) && !self.force => {
                    return Err(PipelineError::ConfigDrift { stage, upstream: *up })
                }
                Some(_) => {}
            }
        }
        let filtered = stage == Stage::Crawl && self.host_filter.is_some();
        if !self.force && !filtered && manifest.stages.get(stage.name()).is_some_and(current) {
            log::info!("{stage}: up to date");
            return Ok(StageStatus::UpToDate);
        }
        log::info!("{stage}: running");
        let summary = stages::run(self, stage)?;
        self.store.mark_complete(
            stage,
            StageMarker {
                config_hash: hash,
                seed,
                completed_at: Utc::now(),
                summary: summary.clone(),
            },
        )?;
        Ok(StageStatus::Ran(summary))
    }

    pub fn run_all(&self) -> Result<Vec<(Stage, StageStatus)>, PipelineError> {
        Stage::ALL
            .into_iter()
            .map(|s| self.run_stage(s).map(|st| (s, st)))
            .collect()
    }
}
