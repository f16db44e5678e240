//! Forge software identification and host-list acquisition.
//!
//! A host is identified by matching literal HTML markers taken from each
//! forge's default front page. Host lists come either from scan-export files
//! (bare `host[:port]` lines or JSON records) or from a scan-search API.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use log::{debug, warn};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{get_following, Fetched, HttpFetcher, TransportError};

/// Rules shipped with the crate, one JSON object per line.
pub const DEFAULT_RULES_JSONL: &str = include_str!("../rules/forges.jsonl");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForgeKind {
    #[serde(rename = "gitlab-ce")]
    GitLabCE,
    Gogs,
    Gitea,
    Unknown,
}

impl ForgeKind {
    /// Higher wins when several kinds match the same page. Gitea is a Gogs
    /// fork and can carry Gogs-looking markup, so it is checked first.
    pub fn precedence(self) -> u8 {
        match self {
            ForgeKind::Gitea => 3,
            ForgeKind::Gogs => 2,
            ForgeKind::GitLabCE => 1,
            ForgeKind::Unknown => 0,
        }
    }

    pub fn is_forge(self) -> bool {
        self != ForgeKind::Unknown
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ForgeKind::GitLabCE => "gitlab-ce",
            ForgeKind::Gogs => "gogs",
            ForgeKind::Gitea => "gitea",
            ForgeKind::Unknown => "unknown",
        }
    }
}

impl fmt::Display for ForgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ForgeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gitlab-ce" | "gitlab" | "gitlabce" => Ok(ForgeKind::GitLabCE),
            "gogs" => Ok(ForgeKind::Gogs),
            "gitea" => Ok(ForgeKind::Gitea),
            "unknown" => Ok(ForgeKind::Unknown),
            other => Err(format!("unknown forge kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerprintRule {
    pub kind: ForgeKind,
    pub marker: String,
    #[serde(default)]
    pub version_pattern: Option<String>,
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("rule set is empty")]
    Empty,
    #[error("rule {index}: empty marker")]
    EmptyMarker { index: usize },
    #[error("rule {index}: kind must not be unknown")]
    UnknownKind { index: usize },
    #[error("marker {marker:?} is used by both {first} and {second}")]
    SharedMarker {
        marker: String,
        first: ForgeKind,
        second: ForgeKind,
    },
    #[error("rule {index}: bad version pattern: {source}")]
    Pattern {
        index: usize,
        #[source]
        source: regex::Error,
    },
    #[error("rules file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("reading rules file: {0}")]
    Io(#[from] std::io::Error),
}

/// A validated rule list with compiled version patterns.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<FingerprintRule>,
    patterns: Vec<Option<Regex>>,
}

impl RuleSet {
    pub fn new(rules: Vec<FingerprintRule>) -> Result<Self, RuleError> {
        if rules.is_empty() {
            return Err(RuleError::Empty);
        }
        let mut seen: BTreeMap<&str, ForgeKind> = BTreeMap::new();
        let mut patterns = Vec::with_capacity(rules.len());
        for (index, rule) in rules.iter().enumerate() {
            if rule.marker.is_empty() {
                return Err(RuleError::EmptyMarker { index });
            }
            if rule.kind == ForgeKind::Unknown {
                return Err(RuleError::UnknownKind { index });
            }
            if let Some(&first) = seen.get(rule.marker.as_str()) {
                if first != rule.kind {
                    return Err(RuleError::SharedMarker {
                        marker: rule.marker.clone(),
                        first,
                        second: rule.kind,
                    });
                }
            }
            seen.insert(&rule.marker, rule.kind);
            let pattern = match &rule.version_pattern {
                Some(p) => Some(Regex::new(p).map_err(|source| RuleError::Pattern { index, source })?),
                None => None,
            };
            patterns.push(pattern);
        }
        Ok(Self { rules, patterns })
    }

    /// Parse a JSON-lines rules file body.
    pub fn from_jsonl(text: &str) -> Result<Self, RuleError> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let rule: FingerprintRule = serde_json::from_str(line).map_err(|e| RuleError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            rules.push(rule);
        }
        Self::new(rules)
    }

    pub fn load(path: &Path) -> Result<Self, RuleError> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }

    pub fn builtin() -> Self {
        Self::from_jsonl(DEFAULT_RULES_JSONL).expect("shipped rules are valid")
    }

    pub fn rules(&self) -> &[FingerprintRule] {
        &self.rules
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Detection {
    pub kind: ForgeKind,
    pub version: Option<String>,
}

/// Identify the forge software behind a front page.
pub fn detect_forge(html: &[u8], rules: &RuleSet) -> Detection {
    let text = String::from_utf8_lossy(html);
    let mut best: Option<ForgeKind> = None;
    for rule in &rules.rules {
        if text.contains(rule.marker.as_str())
            && best.is_none_or(|b| rule.kind.precedence() > b.precedence())
        {
            best = Some(rule.kind);
        }
    }
    let Some(kind) = best else {
        return Detection {
            kind: ForgeKind::Unknown,
            version: None,
        };
    };
    let version = rules
        .rules
        .iter()
        .zip(&rules.patterns)
        .filter(|(r, _)| r.kind == kind)
        .filter_map(|(_, p)| p.as_ref())
        .find_map(|re| re.captures(&text).and_then(|c| c.get(1)).map(|m| m.as_str().to_string()));
    Detection { kind, version }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Http,
    Https,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Http => "http",
            Scheme::Https => "https",
        }
    }

    pub fn default_port(self) -> u16 {
        match self {
            Scheme::Http => 80,
            Scheme::Https => 443,
        }
    }

    /// Scheme assumed when a host line names a port but no scheme.
    pub fn for_port(port: u16) -> Self {
        match port {
            443 | 8443 => Scheme::Https,
            _ => Scheme::Http,
        }
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "http" => Ok(Scheme::Http),
            "https" => Ok(Scheme::Https),
            other => Err(format!("unsupported scheme {other:?}")),
        }
    }
}

/// Unique key of a host: (address, port, scheme).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HostKey {
    pub address: String,
    pub port: u16,
    pub scheme: Scheme,
}

impl HostKey {
    pub fn new(address: impl Into<String>, port: u16, scheme: Scheme) -> Self {
        Self {
            address: address.into().to_ascii_lowercase(),
            port,
            scheme,
        }
    }

    /// `scheme://address:port` without a trailing slash.
    pub fn base_url(&self) -> String {
        let host = if self.address.contains(':') && !self.address.starts_with('[') {
            format!("[{}]", self.address)
        } else {
            self.address.clone()
        };
        format!("{}://{}:{}", self.scheme.as_str(), host, self.port)
    }
}

impl fmt::Display for HostKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.base_url())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostRecord {
    pub address: String,
    pub port: u16,
    pub scheme: Scheme,
    pub kind: ForgeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    pub observed_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<String>,
}

impl HostRecord {
    pub fn new(key: HostKey, observed_at: DateTime<Utc>) -> Self {
        Self {
            address: key.address,
            port: key.port,
            scheme: key.scheme,
            kind: ForgeKind::Unknown,
            version: None,
            observed_at,
            annotation: None,
        }
    }

    pub fn key(&self) -> HostKey {
        HostKey::new(self.address.clone(), self.port, self.scheme)
    }
}

/// Merge records sharing a key. The first record's position is kept; when a
/// later duplicate carries a higher-precedence kind, its kind and version win.
pub fn dedup_hosts(records: impl IntoIterator<Item = HostRecord>) -> Vec<HostRecord> {
    let mut order: Vec<HostKey> = Vec::new();
    let mut by_key: BTreeMap<HostKey, HostRecord> = BTreeMap::new();
    for rec in records {
        let key = rec.key();
        match by_key.get_mut(&key) {
            Some(existing) => {
                if rec.kind.precedence() > existing.kind.precedence() {
                    existing.kind = rec.kind;
                    existing.version = rec.version;
                }
            }
            None => {
                order.push(key.clone());
                by_key.insert(key, rec);
            }
        }
    }
    order
        .into_iter()
        .map(|k| by_key.remove(&k).expect("key recorded"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedLine {
    pub line: usize,
    pub content: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HostImport {
    pub records: Vec<HostRecord>,
    pub skipped: Vec<SkippedLine>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read host list {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Deserialize)]
struct HostLine {
    address: String,
    #[serde(default)]
    port: Option<u16>,
    #[serde(default)]
    scheme: Option<Scheme>,
    #[serde(default)]
    kind: Option<ForgeKind>,
    #[serde(default)]
    version: Option<String>,
}

/// Parse one `host`, `host:port`, `[v6]:port` or `scheme://host[:port]` entry.
pub fn parse_host_entry(entry: &str) -> Result<HostKey, String> {
    let entry = entry.trim();
    if entry.is_empty() {
        return Err("empty entry".into());
    }
    if entry.contains("://") {
        let url = url::Url::parse(entry).map_err(|e| e.to_string())?;
        let scheme: Scheme = url.scheme().parse()?;
        let host = url.host_str().ok_or("missing host")?;
        let host = host.trim_start_matches('[').trim_end_matches(']');
        let port = url.port().unwrap_or(scheme.default_port());
        return Ok(HostKey::new(host, port, scheme));
    }
    let (host, port) = if let Some(rest) = entry.strip_prefix('[') {
        let (h, tail) = rest.split_once(']').ok_or("unterminated IPv6 literal")?;
        let port = match tail.strip_prefix(':') {
            Some(p) => Some(parse_port(p)?),
            None if tail.is_empty() => None,
            None => return Err(format!("unexpected text after address: {tail:?}")),
        };
        (h.to_string(), port)
    } else if entry.parse::<std::net::Ipv6Addr>().is_ok() {
        (entry.to_string(), None)
    } else {
        match entry.rsplit_once(':') {
            Some((h, p)) => (h.to_string(), Some(parse_port(p)?)),
            None => (entry.to_string(), None),
        }
    };
    validate_address(&host)?;
    Ok(match port {
        Some(p) => HostKey::new(host, p, Scheme::for_port(p)),
        None => HostKey::new(host, 443, Scheme::Https),
    })
}

fn parse_port(p: &str) -> Result<u16, String> {
    match p.parse::<u32>() {
        Ok(n) if (1..=65535).contains(&n) => Ok(n as u16),
        _ => Err(format!("invalid port {p:?}")),
    }
}

fn validate_address(host: &str) -> Result<(), String> {
    if host.is_empty() {
        return Err("empty address".into());
    }
    if host.parse::<std::net::IpAddr>().is_ok() {
        return Ok(());
    }
    let ok = host
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '.' || c == '_');
    if ok && !host.starts_with('.') && !host.contains("..") {
        Ok(())
    } else {
        Err(format!("invalid address {host:?}"))
    }
}

fn parse_json_line(line: &str, now: DateTime<Utc>) -> Result<HostRecord, String> {
    let h: HostLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let address = h.address.trim().trim_start_matches('[').trim_end_matches(']').to_string();
    validate_address(&address)?;
    let (port, scheme) = match (h.port, h.scheme) {
        (Some(0), _) => return Err("invalid port 0".into()),
        (Some(p), Some(s)) => (p, s),
        (Some(p), None) => (p, Scheme::for_port(p)),
        (None, Some(s)) => (s.default_port(), s),
        (None, None) => (443, Scheme::Https),
    };
    let mut rec = HostRecord::new(HostKey::new(address, port, scheme), now);
    if let Some(kind) = h.kind {
        rec.kind = kind;
        rec.version = h.version;
    }
    Ok(rec)
}

/// Import a host list: bare entries or JSON-lines records, one per line.
/// Malformed lines are reported in [`HostImport::skipped`] and do not abort.
pub fn ingest_host_list(path: &Path) -> Result<HostImport, IngestError> {
    let text = fs::read(path).map_err(|source| IngestError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    Ok(parse_host_list(&String::from_utf8_lossy(&text), Utc::now()))
}

pub fn parse_host_list(text: &str, now: DateTime<Utc>) -> HostImport {
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed = if line.starts_with('{') {
            parse_json_line(line, now)
        } else {
            parse_host_entry(line).map(|key| HostRecord::new(key, now))
        };
        match parsed {
            Ok(rec) => records.push(rec),
            Err(reason) => skipped.push(SkippedLine {
                line: i + 1,
                content: raw.to_string(),
                reason,
            }),
        }
    }
    HostImport {
        records: dedup_hosts(records),
        skipped,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanHit {
    pub address: String,
    pub port: u16,
    pub scheme: Scheme,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScanPage {
    pub hits: Vec<ScanHit>,
    /// Total result count reported by the service, if any.
    pub total: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScanApiError {
    #[error("scan API rejected the credentials")]
    Authentication,
    #[error("scan API quota exhausted")]
    Quota,
    #[error("scan API transport failure: {0}")]
    Transport(String),
    #[error("scan API returned an unexpected response: {0}")]
    Unexpected(String),
}

/// A paginated search over a service holding banner/HTML scan results.
pub trait ScanApiClient: Send + Sync {
    /// Fetch one page (1-based) of hosts whose front page contains `marker`.
    fn search(&self, marker: &str, page: u32) -> Result<ScanPage, ScanApiError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanWarning {
    pub marker: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScanResult {
    pub records: Vec<HostRecord>,
    pub warnings: Vec<ScanWarning>,
}

/// Run one search per rule marker and merge the hits by host key.
///
/// Authentication failures abort. Quota and transport failures stop the
/// query loop; whatever was collected so far is returned together with a
/// warning, unless nothing was collected at all.
pub fn query_scan_api(
    client: &dyn ScanApiClient,
    rules: &RuleSet,
    page_cap: u32,
) -> Result<ScanResult, ScanApiError> {
    let now = Utc::now();
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut failure: Option<ScanApiError> = None;
    'rules: for rule in rules.rules() {
        let mut seen = 0u64;
        let mut page = 1u32;
        loop {
            if page > page_cap {
                warnings.push(ScanWarning {
                    marker: rule.marker.clone(),
                    message: format!("page cap {page_cap} reached"),
                });
                break;
            }
            let result = match client.search(&rule.marker, page) {
                Ok(r) => r,
                Err(ScanApiError::Authentication) => return Err(ScanApiError::Authentication),
                Err(e) => {
                    warn!("scan query for {:?} failed on page {page}: {e}", rule.marker);
                    warnings.push(ScanWarning {
                        marker: rule.marker.clone(),
                        message: e.to_string(),
                    });
                    failure = Some(e);
                    break 'rules;
                }
            };
            if result.hits.is_empty() {
                break;
            }
            seen += result.hits.len() as u64;
            for hit in result.hits {
                let mut rec = HostRecord::new(HostKey::new(hit.address, hit.port, hit.scheme), now);
                rec.kind = rule.kind;
                records.push(rec);
            }
            if result.total.is_some_and(|t| seen >= t) {
                break;
            }
            page += 1;
        }
        debug!("scan query {:?}: {seen} hits", rule.marker);
    }
    if records.is_empty() {
        if let Some(e) = failure {
            return Err(e);
        }
    }
    Ok(ScanResult {
        records: dedup_hosts(records),
        warnings,
    })
}

/// Client for a Shodan-style `host/search` endpoint.
pub struct ShodanClient<F> {
    fetcher: F,
    base_url: String,
    api_key: String,
}

impl<F: HttpFetcher> ShodanClient<F> {
    pub fn new(fetcher: F, base_url: &str, api_key: &str) -> Self {
        Self {
            fetcher,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: api_key.to_string(),
        }
    }

    fn query_url(&self, marker: &str, page: u32) -> String {
        let query = format!("http.html:\"{}\"", marker.replace('"', "\\\""));
        let mut url = url::Url::parse(&format!("{}/shodan/host/search", self.base_url))
            .expect("base url validated by config");
        url.query_pairs_mut()
            .append_pair("key", &self.api_key)
            .append_pair("query", &query)
            .append_pair("page", &page.to_string());
        url.to_string()
    }
}

#[derive(Deserialize)]
struct ShodanResponse {
    #[serde(default)]
    matches: Vec<ShodanMatch>,
    #[serde(default)]
    total: Option<u64>,
}

#[derive(Deserialize)]
struct ShodanMatch {
    ip_str: String,
    port: u16,
    #[serde(default)]
    ssl: Option<serde_json::Value>,
}

impl<F: HttpFetcher> ScanApiClient for ShodanClient<F> {
    fn search(&self, marker: &str, page: u32) -> Result<ScanPage, ScanApiError> {
        let response = self
            .fetcher
            .get(&self.query_url(marker, page), &[("Accept", "application/json")])
            .map_err(|e| ScanApiError::Transport(e.to_string()))?;
        match response.status {
            200 => {}
            401 | 403 => return Err(ScanApiError::Authentication),
            402 | 429 => return Err(ScanApiError::Quota),
            s if s >= 500 => return Err(ScanApiError::Transport(format!("HTTP {s}"))),
            s => return Err(ScanApiError::Unexpected(format!("HTTP {s}"))),
        }
        let body: ShodanResponse =
            serde_json::from_slice(&response.body).map_err(|e| ScanApiError::Unexpected(e.to_string()))?;
        Ok(ScanPage {
            hits: body
                .matches
                .into_iter()
                .map(|m| ScanHit {
                    scheme: if m.ssl.is_some() { Scheme::Https } else { Scheme::Http },
                    address: m.ip_str,
                    port: m.port,
                })
                .collect(),
            total: body.total,
        })
    }
}

/// Fetch the host's front page and re-identify its forge software.
/// Unreachable hosts come back as `Unknown` with an annotation.
pub fn probe_host(host: &HostRecord, fetcher: &dyn HttpFetcher, rules: &RuleSet) -> HostRecord {
    let mut out = host.clone();
    out.observed_at = Utc::now();
    out.kind = ForgeKind::Unknown;
    out.version = None;
    out.annotation = None;
    let url = format!("{}/", host.key().base_url());
    match get_following(fetcher, &url, &[("Accept", "text/html")]) {
        Ok(Fetched::Response { response, .. }) => {
            let d = detect_forge(&response.body, rules);
            out.kind = d.kind;
            out.version = d.version;
            if !response.is_success() {
                out.annotation = Some(format!("front page answered HTTP {}", response.status));
            }
        }
        Ok(Fetched::RedirectRefused { target, .. }) => {
            out.annotation = Some(format!("redirect not followed: {target}"));
        }
        Err(e) => {
            out.annotation = Some(unreachable_note(&e));
        }
    }
    out
}

pub fn unreachable_note(e: &TransportError) -> String {
    format!("unreachable: {e}")
}

/// Probe many hosts with at most `concurrency` connections in flight.
/// Output order follows input order.
pub fn probe_hosts(
    hosts: &[HostRecord],
    fetcher: &dyn HttpFetcher,
    rules: &RuleSet,
    concurrency: usize,
) -> Vec<HostRecord> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| hosts.par_iter().map(|h| probe_host(h, fetcher, rules)).collect())
}
