//! Repository enumeration on fingerprinted forge hosts.
//!
//! Each forge kind is listed through its public JSON search endpoint, with
//! the HTML "explore" pages as a fallback when the API is switched off.
//! Requests to one host are strictly serial and spaced by the configured
//! rate; hosts are crawled concurrently.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use log::{info, warn};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::fingerprint::{ForgeKind, HostKey, HostRecord};
use crate::http::{get_following, Fetched, HttpFetcher, HttpResponse, PoliteFetcher};
use crate::jsonl::{self, Appender, JsonlError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoRef {
    pub host: HostKey,
    pub owner: String,
    pub name: String,
    pub clone_url: String,
    pub discovered_at: DateTime<Utc>,
}

impl RepoRef {
    /// Build a reference whose clone URL is `<host base>/<owner>/<name>.git`.
    pub fn on_host(host: &HostKey, owner: &str, name: &str, discovered_at: DateTime<Utc>) -> Self {
        let clone_url = repo_url(&host.base_url(), owner, name);
        Self {
            host: host.clone(),
            owner: owner.to_string(),
            name: name.to_string(),
            clone_url,
            discovered_at,
        }
    }

    /// Stable identifier `address:port/owner/name`.
    pub fn repo_id(&self) -> String {
        format!("{}:{}/{}/{}", self.host.address, self.host.port, self.owner, self.name)
    }
}

/// `<base>/<owner>/<name>.git` with each path segment percent-encoded.
pub fn repo_url(base: &str, owner: &str, name: &str) -> String {
    let mut url = url::Url::parse(&format!("{}/", base.trim_end_matches('/'))).expect("valid base url");
    {
        let mut segs = url.path_segments_mut().expect("base url has a path");
        segs.pop_if_empty();
        for part in owner.split('/').filter(|p| !p.is_empty()) {
            segs.push(part);
        }
        segs.push(&format!("{name}.git"));
    }
    url.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum HostCrawlStatus {
    Listed { repo_count: usize },
    Unreachable,
    NoPublicRepos,
    LoginRequired,
}

impl HostCrawlStatus {
    pub fn label(&self) -> &'static str {
        match self {
            HostCrawlStatus::Listed { .. } => "listed",
            HostCrawlStatus::Unreachable => "unreachable",
            HostCrawlStatus::NoPublicRepos => "no_public_repos",
            HostCrawlStatus::LoginRequired => "login_required",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrawlLimits {
    /// Requests per second per host.
    pub rate: f64,
    /// Hosts crawled at the same time.
    pub concurrency: usize,
    pub page_cap: u32,
    pub page_size: u32,
}

impl Default for CrawlLimits {
    fn default() -> Self {
        Self {
            rate: 1.0,
            concurrency: 32,
            page_cap: 10_000,
            page_size: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostCrawl {
    pub host: HostKey,
    pub repos: Vec<RepoRef>,
    pub status: HostCrawlStatus,
    pub annotations: Vec<String>,
}

enum Page {
    Items(Vec<(String, String)>),
    LoginRequired,
    Missing,
    Failed(String),
    Malformed(String),
    Unreachable(String),
}

fn api_url(host: &HostKey, kind: ForgeKind, page: u32, size: u32) -> Option<String> {
    let base = host.base_url();
    match kind {
        ForgeKind::Gitea | ForgeKind::Gogs => Some(format!("{base}/api/v1/repos/search?limit={size}&page={page}")),
        ForgeKind::GitLabCE => Some(format!(
            "{base}/api/v4/projects?visibility=public&simple=true&order_by=id&sort=asc&per_page={size}&page={page}"
        )),
        ForgeKind::Unknown => None,
    }
}

fn explore_url(host: &HostKey, kind: ForgeKind, page: u32) -> String {
    let base = host.base_url();
    match kind {
        ForgeKind::GitLabCE => format!("{base}/explore/projects?page={page}"),
        _ => format!("{base}/explore/repos?page={page}"),
    }
}

fn fetch_page(fetcher: &dyn HttpFetcher, url: &str, accept: &str) -> Result<(String, HttpResponse), Page> {
    match get_following(fetcher, url, &[("Accept", accept)]) {
        Ok(Fetched::Response { final_url, response }) => Ok((final_url, response)),
        Ok(Fetched::RedirectRefused { target, .. }) => Err(Page::Unreachable(format!("redirect not followed: {target}"))),
        Err(e) => Err(Page::Unreachable(e.to_string())),
    }
}

fn str_field<'a>(v: &'a Value, path: &[&str]) -> Option<&'a str> {
    let mut cur = v;
    for p in path {
        cur = cur.get(p)?;
    }
    cur.as_str().filter(|s| !s.is_empty())
}

/// Extract (owner, name) pairs from a JSON listing page.
fn parse_api_page(kind: ForgeKind, body: &[u8]) -> Result<Vec<(String, String)>, String> {
    let v: Value = serde_json::from_slice(body).map_err(|e| format!("invalid JSON: {e}"))?;
    let items = match (&v, v.get("data")) {
        (Value::Array(a), _) => a,
        (_, Some(Value::Array(a))) => a,
        _ => return Err("no repository array in response".into()),
    };
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let pair = match kind {
            ForgeKind::GitLabCE => {
                let name = str_field(item, &["path"]);
                let owner = str_field(item, &["namespace", "full_path"]);
                match (owner, name) {
                    (Some(o), Some(n)) => Some((o.to_string(), n.to_string())),
                    _ => str_field(item, &["path_with_namespace"])
                        .and_then(|p| p.rsplit_once('/'))
                        .map(|(o, n)| (o.to_string(), n.to_string())),
                }
            }
            _ => {
                let name = str_field(item, &["name"]);
                let owner = str_field(item, &["owner", "login"]).or_else(|| str_field(item, &["owner", "username"]));
                match (owner, name) {
                    (Some(o), Some(n)) => Some((o.to_string(), n.to_string())),
                    _ => str_field(item, &["full_name"])
                        .and_then(|p| p.split_once('/'))
                        .map(|(o, n)| (o.to_string(), n.to_string())),
                }
            }
        };
        match pair {
            Some(p) => out.push(p),
            None => return Err("repository entry without owner/name".into()),
        }
    }
    Ok(out)
}

fn anchor_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"<a\s[^>]*>"#).expect("anchor regex"))
}

fn attr_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"([a-zA-Z-]+)\s*=\s*"([^"]*)""#).expect("attribute regex"))
}

/// Scrape repository links from an explore page: anchors whose class list
/// contains `name` or `project` and whose href is a relative `/owner/name`.
pub fn parse_explore_page(html: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for tag in anchor_re().find_iter(html) {
        let mut class = "";
        let mut href = "";
        for cap in attr_re().captures_iter(tag.as_str()) {
            match &cap[1] {
                "class" => class = cap.get(2).map_or("", |m| m.as_str()),
                "href" => href = cap.get(2).map_or("", |m| m.as_str()),
                _ => {}
            }
        }
        if !class.split_whitespace().any(|c| c == "name" || c == "project") {
            continue;
        }
        let Some(path) = href.strip_prefix('/') else { continue };
        if path.contains(['?', '#']) {
            continue;
        }
        if let Some((owner, name)) = path.trim_end_matches('/').rsplit_once('/') {
            if !owner.is_empty() && !name.is_empty() {
                out.push((owner.to_string(), name.to_string()));
            }
        }
    }
    out
}

fn looks_like_login(final_url: &str) -> bool {
    let u = final_url.to_ascii_lowercase();
    u.contains("/user/login") || u.contains("/users/sign_in")
}

fn api_page(fetcher: &dyn HttpFetcher, host: &HostKey, kind: ForgeKind, page: u32, size: u32) -> Page {
    let url = api_url(host, kind, page, size).expect("forge kind");
    let (_, resp) = match fetch_page(fetcher, &url, "application/json") {
        Ok(r) => r,
        Err(p) => return p,
    };
    if resp.is_auth_challenge() {
        return Page::LoginRequired;
    }
    if resp.status == 404 {
        return Page::Missing;
    }
    if !resp.is_success() {
        return Page::Failed(format!("HTTP {}", resp.status));
    }
    match parse_api_page(kind, &resp.body) {
        Ok(items) => Page::Items(items),
        Err(e) => Page::Malformed(e),
    }
}

fn html_page(fetcher: &dyn HttpFetcher, host: &HostKey, kind: ForgeKind, page: u32) -> Page {
    let (final_url, resp) = match fetch_page(fetcher, &explore_url(host, kind, page), "text/html") {
        Ok(r) => r,
        Err(p) => return p,
    };
    if resp.is_auth_challenge() || looks_like_login(&final_url) {
        return Page::LoginRequired;
    }
    if resp.status == 404 {
        return Page::Missing;
    }
    if !resp.is_success() {
        return Page::Failed(format!("HTTP {}", resp.status));
    }
    Page::Items(parse_explore_page(&resp.text()))
}

/// List every public repository on `host`.
///
/// The returned status follows the crawl taxonomy exactly: an empty but
/// successful listing is `NoPublicRepos`, an authentication challenge on the
/// listing is `LoginRequired`, and transport failure is `Unreachable`.
pub fn enumerate_repos(host: &HostRecord, fetcher: &dyn HttpFetcher, limits: &CrawlLimits) -> HostCrawl {
    let polite = PoliteFetcher::with_rate(fetcher, limits.rate);
    let key = host.key();
    let kind = host.kind;
    let mut annotations = Vec::new();
    if !kind.is_forge() {
        annotations.push("host is not a recognised forge".to_string());
        return HostCrawl {
            host: key,
            repos: Vec::new(),
            status: HostCrawlStatus::Unreachable,
            annotations,
        };
    }

    let mut use_html = false;
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    let mut repos = Vec::new();
    let mut page = 1u32;
    let status = loop {
        if page > limits.page_cap {
            annotations.push(format!("page cap {} reached", limits.page_cap));
            break None;
        }
        let result = if use_html {
            html_page(&polite, &key, kind, page)
        } else {
            api_page(&polite, &key, kind, page, limits.page_size)
        };
        match result {
            Page::Items(items) => {
                let before = seen.len();
                let now = Utc::now();
                for (owner, name) in items {
                    if seen.insert((owner.clone(), name.clone())) {
                        repos.push(RepoRef::on_host(&key, &owner, &name, now));
                    }
                }
                if seen.len() == before {
                    break None;
                }
                page += 1;
            }
            Page::LoginRequired if page == 1 => break Some(HostCrawlStatus::LoginRequired),
            Page::Missing if page == 1 && !use_html => {
                annotations.push("listing API unavailable; using HTML explore pages".into());
                use_html = true;
            }
            Page::Unreachable(e) if page == 1 => {
                annotations.push(e);
                break Some(HostCrawlStatus::Unreachable);
            }
            Page::Failed(e) if page == 1 => {
                annotations.push(format!("listing failed: {e}"));
                break Some(HostCrawlStatus::Unreachable);
            }
            Page::Failed(e) => {
                annotations.push(format!("page {page}: {e}"));
                break None;
            }
            Page::Malformed(e) => {
                annotations.push(format!("page {page}: parse failure: {e}"));
                break None;
            }
            Page::LoginRequired => {
                annotations.push(format!("page {page}: authentication required"));
                break None;
            }
            Page::Missing => {
                annotations.push(format!("page {page}: not found"));
                break None;
            }
            Page::Unreachable(e) => {
                annotations.push(format!("page {page}: {e}"));
                break None;
            }
        }
    };
    let status = status.unwrap_or(if repos.is_empty() {
        HostCrawlStatus::NoPublicRepos
    } else {
        HostCrawlStatus::Listed {
            repo_count: repos.len(),
        }
    });
    HostCrawl {
        host: key,
        repos,
        status,
        annotations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum CrawlRecord {
    Repo(RepoRef),
    Status {
        host: HostKey,
        #[serde(flatten)]
        status: HostCrawlStatus,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        annotations: Vec<String>,
        crawled_at: DateTime<Utc>,
    },
}

#[derive(Debug, Error)]
pub enum CrawlError {
    #[error("crawl store: {0}")]
    Store(#[from] JsonlError),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Persisted crawl state: one JSON-lines file of repository and status
/// records. A host's repositories are written immediately before its status
/// record; repositories not followed by a status are discarded on load.
pub struct CrawlStore {
    appender: Appender,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredCrawl {
    pub status: HostCrawlStatus,
    pub repos: Vec<RepoRef>,
    pub annotations: Vec<String>,
}

impl CrawlStore {
    pub fn open(path: &Path) -> Result<Self, JsonlError> {
        Ok(Self {
            appender: Appender::open(path)?,
        })
    }

    pub fn path(&self) -> &Path {
        self.appender.path()
    }

    /// Latest completed crawl of each host.
    pub fn load(&self) -> Result<BTreeMap<HostKey, StoredCrawl>, JsonlError> {
        load_crawl_state(self.path())
    }

    fn record(&self, crawl: &HostCrawl) -> Result<(), JsonlError> {
        let mut batch: Vec<CrawlRecord> = crawl.repos.iter().cloned().map(CrawlRecord::Repo).collect();
        batch.push(CrawlRecord::Status {
            host: crawl.host.clone(),
            status: crawl.status,
            annotations: crawl.annotations.clone(),
            crawled_at: Utc::now(),
        });
        self.appender.append_batch(&batch)
    }
}

pub fn load_crawl_state(path: &Path) -> Result<BTreeMap<HostKey, StoredCrawl>, JsonlError> {
    let records: Vec<CrawlRecord> = jsonl::read_all(path)?;
    let mut pending: BTreeMap<HostKey, Vec<RepoRef>> = BTreeMap::new();
    let mut done = BTreeMap::new();
    for r in records {
        match r {
            CrawlRecord::Repo(repo) => pending.entry(repo.host.clone()).or_default().push(repo),
            CrawlRecord::Status {
                host,
                status,
                annotations,
                ..
            } => {
                let repos = pending.remove(&host).unwrap_or_default();
                done.insert(
                    host,
                    StoredCrawl {
                        status,
                        repos,
                        annotations,
                    },
                );
            }
        }
    }
    Ok(done)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlSummary {
    /// Hosts per status label, over every requested host with a known status.
    pub statuses: BTreeMap<String, usize>,
    pub repositories: usize,
    pub crawled: usize,
    pub resumed: usize,
    pub not_forges: usize,
}

/// Crawl every forge host, persisting results as each host finishes. Hosts
/// that already have a stored status are skipped unless `force` is set.
pub fn crawl_corpus(
    hosts: &[HostRecord],
    fetcher: &dyn HttpFetcher,
    limits: &CrawlLimits,
    store: &CrawlStore,
    force: bool,
) -> Result<CrawlSummary, CrawlError> {
    use rayon::prelude::*;

    let existing = store.load()?;
    let mut summary = CrawlSummary::default();
    let mut todo = Vec::new();
    for h in hosts {
        if !h.kind.is_forge() {
            summary.not_forges += 1;
            continue;
        }
        if !force && existing.contains_key(&h.key()) {
            summary.resumed += 1;
            continue;
        }
        todo.push(h);
    }
    info!("crawling {} hosts ({} resumed)", todo.len(), summary.resumed);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(limits.concurrency.max(1))
        .build()
        .map_err(|e| CrawlError::Pool(e.to_string()))?;
    pool.install(|| {
        todo.par_iter().try_for_each(|host| -> Result<(), CrawlError> {
            let crawl = enumerate_repos(host, fetcher, limits);
            if !crawl.annotations.is_empty() {
                warn!("{}: {}", crawl.host, crawl.annotations.join("; "));
            }
            store.record(&crawl)?;
            Ok(())
        })
    })?;
    summary.crawled = todo.len();

    let state = store.load()?;
    for h in hosts.iter().filter(|h| h.kind.is_forge()) {
        if let Some(s) = state.get(&h.key()) {
            *summary.statuses.entry(s.status.label().to_string()).or_default() += 1;
            summary.repositories += s.repos.len();
        }
    }
    Ok(summary)
}
