//! Declarative pipeline configuration (TOML).
//!
//! Relative paths are resolved against the directory holding the config
//! file. Credentials are never stored in the file; the config names the
//! environment variables that hold them.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cloner::CloneLimits;
use crate::crawler::CrawlLimits;
use crate::dedup::RetryPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub user_agent: String,
    pub scan: ScanConfig,
    pub probe: ProbeConfig,
    pub crawl: CrawlConfig,
    pub clone: CloneConfig,
    pub comparison: ComparisonConfig,
    pub dedup: DedupConfig,
    pub label: LabelConfig,
    pub stats: StatsConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            user_agent: concat!("penumbra/", env!("CARGO_PKG_VERSION")).into(),
            scan: ScanConfig::default(),
            probe: ProbeConfig::default(),
            crawl: CrawlConfig::default(),
            clone: CloneConfig::default(),
            comparison: ComparisonConfig::default(),
            dedup: DedupConfig::default(),
            label: LabelConfig::default(),
            stats: StatsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    /// Host lists to import: `host`, `host:port`, URLs, or JSON-lines records.
    pub host_lists: Vec<PathBuf>,
    /// Fingerprint rules; the shipped rules are used when absent.
    pub rules: Option<PathBuf>,
    /// Scan-API base URL; the API is not queried when absent.
    pub api_base: Option<String>,
    pub api_key_env: String,
    pub page_cap: u32,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            host_lists: vec![],
            rules: None,
            api_base: None,
            api_key_env: "SHODAN_API_KEY".into(),
            page_cap: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub concurrency: usize,
    pub timeout_secs: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            concurrency: 32,
            timeout_secs: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrawlConfig {
    /// Requests per second per host.
    pub rate: f64,
    pub concurrency: usize,
    pub page_cap: u32,
    pub page_size: u32,
}

impl Default for CrawlConfig {
    fn default() -> Self {
        let d = CrawlLimits::default();
        Self {
            rate: d.rate,
            concurrency: d.concurrency,
            page_cap: d.page_cap,
            page_size: d.page_size,
        }
    }
}

impl CrawlConfig {
    pub fn limits(&self) -> CrawlLimits {
        CrawlLimits {
            rate: self.rate,
            concurrency: self.concurrency,
            page_cap: self.page_cap,
            page_size: self.page_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloneConfig {
    /// Clone destination; `<store>/repos` when absent.
    pub dest: Option<PathBuf>,
    pub timeout_mins: u64,
    pub retries: u32,
    pub concurrency: usize,
}

impl Default for CloneConfig {
    fn default() -> Self {
        Self {
            dest: None,
            timeout_mins: 30,
            retries: 2,
            concurrency: 8,
        }
    }
}

impl CloneConfig {
    pub fn limits(&self) -> CloneLimits {
        CloneLimits {
            timeout: Duration::from_secs(self.timeout_mins * 60),
            retries: self.retries,
            concurrency: self.concurrency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonConfig {
    /// JSON-lines repository-creation events; no comparison corpus when absent.
    pub events: Option<PathBuf>,
    pub corpus: String,
    /// Where `owner/name.git` is cloned from.
    pub base_url: String,
    pub oversample_factor: f64,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            events: None,
            corpus: "github".into(),
            base_url: "https://github.com".into(),
            oversample_factor: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupConfig {
    pub github: bool,
    pub github_base: String,
    pub github_token_env: String,
    pub software_heritage: bool,
    pub software_heritage_base: String,
    pub software_heritage_token_env: String,
    /// Lookups per second per target.
    pub rate: f64,
    pub retry_rounds: u32,
    pub max_wait_secs: u64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            github: true,
            github_base: "https://api.github.com".into(),
            github_token_env: "GITHUB_TOKEN".into(),
            software_heritage: true,
            software_heritage_base: "https://archive.softwareheritage.org".into(),
            software_heritage_token_env: "SWH_TOKEN".into(),
            rate: 0.5,
            retry_rounds: 2,
            max_wait_secs: 60,
        }
    }
}

impl DedupConfig {
    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            rounds: self.retry_rounds,
            max_wait: Duration::from_secs(self.max_wait_secs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    /// University domains (newline text or JSON); shipped sample when absent.
    pub university_domains: Option<PathBuf>,
    pub academic_threshold: f64,
    pub extra_denylist: Vec<String>,
    /// GeoLite2-Country CSV blocks files (IPv4 and/or IPv6).
    pub geo_blocks: Vec<PathBuf>,
    pub geo_locations: Option<PathBuf>,
    /// CSV `region,population[,gh_user_percent]` for the geographic table.
    pub populations: Option<PathBuf>,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            university_domains: None,
            academic_threshold: crate::label::DEFAULT_ACADEMIC_THRESHOLD,
            extra_denylist: vec![],
            geo_blocks: vec![],
            geo_locations: None,
            populations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub rare_language_threshold: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            rare_language_threshold: 1000,
            tol: 1e-10,
            max_iter: 50,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn resolve_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        resolve(base, p);
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Read, resolve relative paths against the file's directory, validate.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text).map_err(|message| ConfigError::Parse {
            path: path.display().to_string(),
            message,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in &mut self.scan.host_lists {
            resolve(base, p);
        }
        resolve_opt(base, &mut self.scan.rules);
        resolve_opt(base, &mut self.clone.dest);
        resolve_opt(base, &mut self.comparison.events);
        resolve_opt(base, &mut self.label.university_domains);
        for p in &mut self.label.geo_blocks {
            resolve(base, p);
        }
        resolve_opt(base, &mut self.label.geo_locations);
        resolve_opt(base, &mut self.label.populations);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.crawl.rate.is_nan() || self.crawl.rate <= 0.0 {
            return bad("crawl.rate must be positive");
        }
        if self.dedup.rate.is_nan() || self.dedup.rate <= 0.0 {
            return bad("dedup.rate must be positive");
        }
        if self.comparison.oversample_factor.is_nan() || self.comparison.oversample_factor < 1.0 {
            return bad("comparison.oversample_factor must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.label.academic_threshold) {
            return bad("label.academic_threshold must lie in [0, 1]");
        }
        if self.label.geo_blocks.is_empty() != self.label.geo_locations.is_none() {
            return bad("label.geo_blocks and label.geo_locations must be given together");
        }
        for (name, url) in [
            ("comparison.base_url", &self.comparison.base_url),
            ("dedup.github_base", &self.dedup.github_base),
            ("dedup.software_heritage_base", &self.dedup.software_heritage_base),
        ] {
            if url::Url::parse(url).is_err() {
                return Err(ConfigError::Invalid(format!("{name} is not a URL: {url}")));
            }
        }
        if let Some(api) = &self.scan.api_base {
            if url::Url::parse(api).is_err() {
                return bad("scan.api_base is not a URL");
            }
        }
        Ok(())
    }

    /// Hash of the settings that affect results. Politeness and resource
    /// knobs (rates, concurrency, timeouts, retries, clone destination) are
    /// left out so they can change between runs without invalidating
    /// finished stages.
    pub fn result_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        for (section, keys) in [
            ("probe", &["concurrency", "timeout_secs"][..]),
            ("crawl", &["rate", "concurrency"][..]),
            ("clone", &["dest", "timeout_mins", "retries", "concurrency"][..]),
            ("dedup", &["rate", "retry_rounds", "max_wait_secs"][..]),
        ] {
            if let Some(obj) = v.get_mut(section).and_then(|s| s.as_object_mut()) {
                for k in keys {
                    obj.remove(*k);
                }
            }
        }
        if let Some(obj) = v.as_object_mut() {
            obj.remove("user_agent");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}
