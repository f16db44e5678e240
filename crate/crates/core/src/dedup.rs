//! Overlap between repositories, judged by their first and last commit hashes.
//!
//! A repository whose first commit exists elsewhere is a copy of something;
//! if its last commit exists there too the copy is complete, otherwise the two
//! have diverged.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::RwLock;
use std::time::Duration;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::RepoSnapshot;
use crate::http::{HttpFetcher, HttpResponse};
use crate::jsonl::{self, Appender, JsonlError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OverlapClass {
    Novel,
    DuplicateComplete,
    Diverged,
}

impl OverlapClass {
    pub fn as_str(self) -> &'static str {
        match self {
            OverlapClass::Novel => "novel",
            OverlapClass::DuplicateComplete => "duplicate-complete",
            OverlapClass::Diverged => "diverged",
        }
    }
}

/// `last_found` is `None` only for single-commit repositories, where the
/// first commit is also the last.
pub fn classify_overlap(first_found: bool, last_found: Option<bool>) -> OverlapClass {
    match (first_found, last_found) {
        (false, _) => OverlapClass::Novel,
        (true, Some(false)) => OverlapClass::Diverged,
        (true, Some(true) | None) => OverlapClass::DuplicateComplete,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapTarget {
    Github,
    SoftwareHeritage,
    IntraCorpus,
}

impl OverlapTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            OverlapTarget::Github => "github",
            OverlapTarget::SoftwareHeritage => "software-heritage",
            OverlapTarget::IntraCorpus => "intra-corpus",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub repo_id: String,
    pub target: OverlapTarget,
    pub first_hash_found: bool,
    pub last_hash_found: Option<bool>,
    pub class: OverlapClass,
    pub queried_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LookupError {
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("authentication rejected")]
    Authentication,
    #[error("transport: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Unexpected(String),
}

/// Answers "does this commit hash exist in the target archive?".
pub trait HashSearchClient: Send + Sync {
    fn target(&self) -> OverlapTarget;
    fn contains(&self, hash: &str) -> Result<bool, LookupError>;
}

fn retry_after(response: &HttpResponse) -> Option<Duration> {
    if let Some(secs) = response.header("retry-after").and_then(|v| v.trim().parse::<u64>().ok()) {
        return Some(Duration::from_secs(secs));
    }
    let reset = response
        .header("x-ratelimit-reset")
        .and_then(|v| v.trim().parse::<i64>().ok())?;
    Some(Duration::from_secs((reset - Utc::now().timestamp()).max(0) as u64))
}

fn common_status(response: &HttpResponse) -> Result<(), LookupError> {
    match response.status {
        429 => Err(LookupError::RateLimited { retry_after: retry_after(response) }),
        403 if response.header("x-ratelimit-remaining") == Some("0") => {
            Err(LookupError::RateLimited { retry_after: retry_after(response) })
        }
        401 | 403 => Err(LookupError::Authentication),
        s if s >= 500 => Err(LookupError::Transport(format!("HTTP {s}"))),
        _ => Ok(()),
    }
}

/// GitHub commit search (`/search/commits?q=hash:<sha>`).
pub struct GithubCommitSearch<F> {
    fetcher: F,
    base_url: String,
    token: Option<String>,
}

impl<F: HttpFetcher> GithubCommitSearch<F> {
    pub fn new(fetcher: F, base_url: &str, token: Option<String>) -> Self {
        Self {
            fetcher,
            base_url: base_url.trim_end_matches('/').to_string(),
            token,
        }
    }
}

#[derive(Deserialize)]
struct SearchCount {
    total_count: u64,
}

impl<F: HttpFetcher> HashSearchClient for GithubCommitSearch<F> {
    fn target(&self) -> OverlapTarget {
        OverlapTarget::Github
    }

    fn contains(&self, hash: &str) -> Result<bool, LookupError> {
        let url = format!("{}/search/commits?q=hash:{hash}", self.base_url);
        let auth = self.token.as_ref().map(|t| format!("Bearer {t}"));
        let mut headers = vec![("Accept", "application/vnd.github+json")];
        if let Some(a) = &auth {
            headers.push(("Authorization", a.as_str()));
        }
        let response = self
            .fetcher
            .get(&url, &headers)
            .map_err(|e| LookupError::Transport(e.to_string()))?;
        common_status(&response)?;
        if response.status != 200 {
            return Err(LookupError::Unexpected(format!("HTTP {}", response.status)));
        }
        let body: SearchCount =
            serde_json::from_slice(&response.body).map_err(|e| LookupError::Unexpected(e.to_string()))?;
        Ok(body.total_count > 0)
    }
}

/// Software Heritage revision lookup (`/api/1/revision/<sha>/`).
pub struct SoftwareHeritage<F> {
    fetcher: F,
    base_url: String,
    token: Option<String>,
}

impl<F: HttpFetcher> SoftwareHeritage<F> {
    pub fn new(fetcher: F, base_url: &str, token: Option<String>) -> Self {
        Self {
            fetcher,
            base_url: base_url.trim_end_matches('/').to_string(),
            token,
        }
    }
}

impl<F: HttpFetcher> HashSearchClient for SoftwareHeritage<F> {
    fn target(&self) -> OverlapTarget {
        OverlapTarget::SoftwareHeritage
    }

    fn contains(&self, hash: &str) -> Result<bool, LookupError> {
        let url = format!("{}/api/1/revision/{hash}/", self.base_url);
        let auth = self.token.as_ref().map(|t| format!("Bearer {t}"));
        let mut headers = vec![("Accept", "application/json")];
        if let Some(a) = &auth {
            headers.push(("Authorization", a.as_str()));
        }
        let response = self
            .fetcher
            .get(&url, &headers)
            .map_err(|e| LookupError::Transport(e.to_string()))?;
        common_status(&response)?;
        match response.status {
            200 => Ok(true),
            404 => Ok(false),
            s => Err(LookupError::Unexpected(format!("HTTP {s}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CacheEntry {
    target: OverlapTarget,
    hash: String,
    found: bool,
}

/// Settled lookups keyed by (target, hash), persisted as JSON lines.
/// Errors are never cached.
pub struct HashCache {
    entries: RwLock<HashMap<(OverlapTarget, String), bool>>,
    log: Option<Appender>,
}

impl HashCache {
    pub fn in_memory() -> Self {
        Self {
            entries: RwLock::new(HashMap::new()),
            log: None,
        }
    }

    pub fn open(path: &Path) -> Result<Self, JsonlError> {
        let entries = jsonl::read_all::<CacheEntry>(path)?
            .into_iter()
            .map(|e| ((e.target, e.hash), e.found))
            .collect();
        Ok(Self {
            entries: RwLock::new(entries),
            log: Some(Appender::open(path)?),
        })
    }

    pub fn get(&self, target: OverlapTarget, hash: &str) -> Option<bool> {
        self.entries.read().expect("cache lock").get(&(target, hash.to_string())).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn put(&self, target: OverlapTarget, hash: &str, found: bool) -> Result<(), JsonlError> {
        let mut map = self.entries.write().expect("cache lock");
        if map.insert((target, hash.to_string()), found).is_none() {
            if let Some(log) = &self.log {
                log.append(&CacheEntry {
                    target,
                    hash: hash.to_string(),
                    found,
                })?;
            }
        }
        Ok(())
    }

    /// Cached answer, or ask the client and remember a definite answer.
    pub fn lookup(&self, client: &dyn HashSearchClient, hash: &str) -> Result<bool, LookupFailure> {
        let target = client.target();
        if let Some(found) = self.get(target, hash) {
            return Ok(found);
        }
        let found = client.contains(hash).map_err(LookupFailure::Lookup)?;
        self.put(target, hash, found).map_err(|e| LookupFailure::Cache(e.to_string()))?;
        Ok(found)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LookupFailure {
    #[error(transparent)]
    Lookup(LookupError),
    #[error("cache write failed: {0}")]
    Cache(String),
}

/// A check that could not be settled; retried on a later pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingCheck {
    pub repo_id: String,
    pub target: OverlapTarget,
    pub reason: String,
    pub retry_after_secs: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckOutcome {
    Classified(OverlapReport),
    Pending(PendingCheck),
}

/// Look up the first hash, then the last one when the first is known and
/// the repository has more than one commit.
pub fn check_remote(snapshot: &RepoSnapshot, client: &dyn HashSearchClient, cache: &HashCache) -> CheckOutcome {
    let pending = |e: LookupFailure| {
        let retry_after_secs = match &e {
            LookupFailure::Lookup(LookupError::RateLimited { retry_after }) => retry_after.map(|d| d.as_secs()),
            _ => None,
        };
        CheckOutcome::Pending(PendingCheck {
            repo_id: snapshot.repo_id.clone(),
            target: client.target(),
            reason: e.to_string(),
            retry_after_secs,
        })
    };
    let first = match cache.lookup(client, &snapshot.first_commit_hash) {
        Ok(f) => f,
        Err(e) => return pending(e),
    };
    let last = if first && snapshot.commit_count >= 2 {
        match cache.lookup(client, &snapshot.last_commit_hash) {
            Ok(l) => Some(l),
            Err(e) => return pending(e),
        }
    } else {
        None
    };
    CheckOutcome::Classified(OverlapReport {
        repo_id: snapshot.repo_id.clone(),
        target: client.target(),
        first_hash_found: first,
        last_hash_found: last,
        class: classify_overlap(first, last),
        queried_at: Utc::now(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Extra passes over still-pending repositories.
    pub rounds: u32,
    /// Longest wait honoured between passes.
    pub max_wait: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            rounds: 2,
            max_wait: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CheckBatch {
    pub reports: Vec<OverlapReport>,
    pub pending: Vec<PendingCheck>,
}

/// Check every snapshot against one target, retrying pending ones.
/// Output order follows the input order.
pub fn check_corpus(
    snapshots: &[RepoSnapshot],
    client: &dyn HashSearchClient,
    cache: &HashCache,
    policy: RetryPolicy,
) -> CheckBatch {
    let mut settled: Vec<Option<CheckOutcome>> = snapshots
        .par_iter()
        .map(|s| Some(check_remote(s, client, cache)))
        .collect();
    for _ in 0..policy.rounds {
        let waiting: Vec<usize> = settled
            .iter()
            .enumerate()
            .filter(|(_, o)| matches!(o, Some(CheckOutcome::Pending(_))))
            .map(|(i, _)| i)
            .collect();
        if waiting.is_empty() {
            break;
        }
        let wait = waiting
            .iter()
            .filter_map(|i| match &settled[*i] {
                Some(CheckOutcome::Pending(p)) => p.retry_after_secs,
                _ => None,
            })
            .max()
            .map_or(Duration::ZERO, Duration::from_secs)
            .min(policy.max_wait);
        std::thread::sleep(wait);
        for i in waiting {
            settled[i] = Some(check_remote(&snapshots[i], client, cache));
        }
    }
    let mut batch = CheckBatch::default();
    for o in settled.into_iter().flatten() {
        match o {
            CheckOutcome::Classified(r) => batch.reports.push(r),
            CheckOutcome::Pending(p) => batch.pending.push(p),
        }
    }
    batch
}

/// Repositories sharing a first commit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MirrorGroup {
    pub first_commit_hash: String,
    /// Members that share their last commit with another member.
    pub mirrors: Vec<String>,
    /// Members whose last commit is unique within the group.
    pub diverged: Vec<String>,
}

impl MirrorGroup {
    pub fn size(&self) -> usize {
        self.mirrors.len() + self.diverged.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MirrorCensus {
    pub repositories: usize,
    pub groups: Vec<MirrorGroup>,
    pub grouped_repositories: usize,
    pub mirror_repositories: usize,
    pub diverged_repositories: usize,
}

/// Group snapshots by first commit hash. Groups are ordered by hash and
/// member lists by repository id.
pub fn intra_corpus_mirrors(snapshots: &[RepoSnapshot]) -> MirrorCensus {
    let mut by_first: BTreeMap<&str, Vec<&RepoSnapshot>> = BTreeMap::new();
    for s in snapshots {
        by_first.entry(s.first_commit_hash.as_str()).or_default().push(s);
    }
    let mut census = MirrorCensus {
        repositories: snapshots.len(),
        ..Default::default()
    };
    for (first, members) in by_first {
        if members.len() < 2 {
            continue;
        }
        let mut last_counts: HashMap<&str, usize> = HashMap::new();
        for m in &members {
            *last_counts.entry(m.last_commit_hash.as_str()).or_default() += 1;
        }
        let mut group = MirrorGroup {
            first_commit_hash: first.to_string(),
            mirrors: vec![],
            diverged: vec![],
        };
        for m in &members {
            if last_counts[m.last_commit_hash.as_str()] >= 2 {
                group.mirrors.push(m.repo_id.clone());
            } else {
                group.diverged.push(m.repo_id.clone());
            }
        }
        group.mirrors.sort();
        group.diverged.sort();
        census.grouped_repositories += group.size();
        census.mirror_repositories += group.mirrors.len();
        census.diverged_repositories += group.diverged.len();
        census.groups.push(group);
    }
    census
}

/// Intra-corpus reports: a repository counts as found when another
/// repository in the corpus shares the hash.
pub fn intra_corpus_reports(snapshots: &[RepoSnapshot], at: DateTime<Utc>) -> Vec<OverlapReport> {
    let mut firsts: HashMap<&str, usize> = HashMap::new();
    let mut lasts: HashMap<&str, usize> = HashMap::new();
    for s in snapshots {
        *firsts.entry(&s.first_commit_hash).or_default() += 1;
        *lasts.entry(&s.last_commit_hash).or_default() += 1;
    }
    snapshots
        .iter()
        .map(|s| {
            let first = firsts[s.first_commit_hash.as_str()] >= 2;
            let last = (first && s.commit_count >= 2).then(|| lasts[s.last_commit_hash.as_str()] >= 2);
            OverlapReport {
                repo_id: s.repo_id.clone(),
                target: OverlapTarget::IntraCorpus,
                first_hash_found: first,
                last_hash_found: last,
                class: classify_overlap(first, last),
                queried_at: at,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginSplit {
    pub eligible: Vec<String>,
    pub excluded: Vec<String>,
    pub pending: Vec<String>,
}

/// Keep only repositories that are novel with respect to GitHub; copies are
/// excluded even when they have diverged. Repositories without a settled
/// GitHub report are pending.
pub fn margin_filter(snapshots: &[RepoSnapshot], reports: &[OverlapReport]) -> MarginSplit {
    let github: HashMap<&str, OverlapClass> = reports
        .iter()
        .filter(|r| r.target == OverlapTarget::Github)
        .map(|r| (r.repo_id.as_str(), r.class))
        .collect();
    let mut split = MarginSplit::default();
    for s in snapshots {
        let id = s.repo_id.clone();
        match github.get(s.repo_id.as_str()) {
            Some(OverlapClass::Novel) => split.eligible.push(id),
            Some(_) => split.excluded.push(id),
            None => split.pending.push(id),
        }
    }
    split
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::TransportError;
    use proptest::prelude::*;
    use std::collections::HashSet;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn snap(id: &str, first: &str, last: &str, n: usize) -> RepoSnapshot {
        RepoSnapshot {
            repo_id: id.into(),
            main_branch: "main".into(),
            head_paths: vec![],
            remote_branch_count: 1,
            first_commit_hash: first.into(),
            last_commit_hash: last.into(),
            commit_count: n,
        }
    }

    struct Stub {
        known: HashSet<String>,
        fail_first: usize,
        calls: AtomicUsize,
    }

    impl Stub {
        fn new(known: &[&str]) -> Self {
            Self {
                known: known.iter().map(|s| s.to_string()).collect(),
                fail_first: 0,
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl HashSearchClient for Stub {
        fn target(&self) -> OverlapTarget {
            OverlapTarget::Github
        }
        fn contains(&self, hash: &str) -> Result<bool, LookupError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                return Err(LookupError::RateLimited {
                    retry_after: Some(Duration::from_secs(0)),
                });
            }
            Ok(self.known.contains(hash))
        }
    }

    #[test]
    fn all_five_combinations() {
        use OverlapClass::*;
        assert_eq!(classify_overlap(true, Some(true)), DuplicateComplete);
        assert_eq!(classify_overlap(true, Some(false)), Diverged);
        assert_eq!(classify_overlap(true, None), DuplicateComplete);
        assert_eq!(classify_overlap(false, Some(true)), Novel);
        assert_eq!(classify_overlap(false, Some(false)), Novel);
        assert_eq!(classify_overlap(false, None), Novel);
    }

    fn class_of(o: CheckOutcome) -> Option<OverlapClass> {
        match o {
            CheckOutcome::Classified(r) => Some(r.class),
            CheckOutcome::Pending(_) => None,
        }
    }

    #[test]
    fn remote_checks() {
        let s = snap("r", "aaa", "bbb", 5);
        let cache = HashCache::in_memory();
        assert_eq!(
            class_of(check_remote(&s, &Stub::new(&["aaa", "bbb"]), &cache)),
            Some(OverlapClass::DuplicateComplete)
        );
        let cache = HashCache::in_memory();
        assert_eq!(class_of(check_remote(&s, &Stub::new(&["aaa"]), &cache)), Some(OverlapClass::Diverged));
        let cache = HashCache::in_memory();
        assert_eq!(class_of(check_remote(&s, &Stub::new(&[]), &cache)), Some(OverlapClass::Novel));
    }

    #[test]
    fn last_hash_skipped_when_first_missing_or_single_commit() {
        let stub = Stub::new(&[]);
        check_remote(&snap("r", "aaa", "bbb", 5), &stub, &HashCache::in_memory());
        assert_eq!(stub.calls.load(Ordering::SeqCst), 1);
        let stub = Stub::new(&["aaa"]);
        let o = check_remote(&snap("r", "aaa", "aaa", 1), &stub, &HashCache::in_memory());
        assert_eq!(stub.calls.load(Ordering::SeqCst), 1);
        assert_eq!(class_of(o), Some(OverlapClass::DuplicateComplete));
    }

    #[test]
    fn rate_limit_is_pending_not_novel() {
        let mut stub = Stub::new(&[]);
        stub.fail_first = 1;
        let cache = HashCache::in_memory();
        match check_remote(&snap("r", "aaa", "bbb", 2), &stub, &cache) {
            CheckOutcome::Pending(p) => {
                assert_eq!(p.retry_after_secs, Some(0));
                assert_eq!(p.repo_id, "r");
            }
            other => panic!("expected pending, got {other:?}"),
        }
        assert!(cache.is_empty(), "errors must not be cached");
        // a later pass settles it
        assert_eq!(class_of(check_remote(&snap("r", "aaa", "bbb", 2), &stub, &cache)), Some(OverlapClass::Novel));
    }

    #[test]
    fn corpus_retry_rounds() {
        let mut stub = Stub::new(&["aaa"]);
        stub.fail_first = 1;
        let snaps = vec![snap("r", "aaa", "bbb", 2)];
        let policy = RetryPolicy {
            rounds: 1,
            max_wait: Duration::ZERO,
        };
        let batch = check_corpus(&snaps, &stub, &HashCache::in_memory(), policy);
        assert_eq!(batch.reports.len(), 1);
        assert!(batch.pending.is_empty());
        assert_eq!(batch.reports[0].class, OverlapClass::Diverged);
        let mut stub = Stub::new(&[]);
        stub.fail_first = 100;
        let policy = RetryPolicy {
            rounds: 2,
            max_wait: Duration::ZERO,
        };
        let batch = check_corpus(&snaps, &stub, &HashCache::in_memory(), policy);
        assert_eq!(batch.pending.len(), 1);
        assert_eq!(stub.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn cache_persists_and_short_circuits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = HashCache::open(&path).unwrap();
            let stub = Stub::new(&["aaa"]);
            check_remote(&snap("r", "aaa", "bbb", 2), &stub, &cache);
            assert_eq!(cache.len(), 2);
        }
        let cache = HashCache::open(&path).unwrap();
        let stub = Stub::new(&[]);
        let o = check_remote(&snap("r", "aaa", "bbb", 2), &stub, &cache);
        assert_eq!(stub.calls.load(Ordering::SeqCst), 0);
        assert_eq!(class_of(o), Some(OverlapClass::Diverged));
    }

    struct CannedFetcher(HttpResponse);
    impl HttpFetcher for CannedFetcher {
        fn get(&self, _url: &str, _h: &[(&str, &str)]) -> Result<HttpResponse, TransportError> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn github_client_statuses() {
        let ok = GithubCommitSearch::new(CannedFetcher(HttpResponse::new(200, r#"{"total_count":1,"items":[]}"#)), "http://x", None);
        assert_eq!(ok.contains("aaa"), Ok(true));
        let none = GithubCommitSearch::new(CannedFetcher(HttpResponse::new(200, r#"{"total_count":0}"#)), "http://x", None);
        assert_eq!(none.contains("aaa"), Ok(false));
        let limited = GithubCommitSearch::new(
            CannedFetcher(HttpResponse::new(429, "").with_header("Retry-After", "30")),
            "http://x",
            None,
        );
        assert_eq!(
            limited.contains("aaa"),
            Err(LookupError::RateLimited {
                retry_after: Some(Duration::from_secs(30))
            })
        );
        let exhausted = GithubCommitSearch::new(
            CannedFetcher(HttpResponse::new(403, "").with_header("X-RateLimit-Remaining", "0")),
            "http://x",
            None,
        );
        assert!(matches!(exhausted.contains("a"), Err(LookupError::RateLimited { .. })));
        let denied = GithubCommitSearch::new(CannedFetcher(HttpResponse::new(401, "")), "http://x", None);
        assert_eq!(denied.contains("a"), Err(LookupError::Authentication));
    }

    #[test]
    fn software_heritage_statuses() {
        let sh = |s| SoftwareHeritage::new(CannedFetcher(HttpResponse::new(s, "{}")), "http://x", None);
        assert_eq!(sh(200).contains("a"), Ok(true));
        assert_eq!(sh(404).contains("a"), Ok(false));
        assert!(matches!(sh(503).contains("a"), Err(LookupError::Transport(_))));
        assert!(matches!(sh(429).contains("a"), Err(LookupError::RateLimited { .. })));
    }

    #[test]
    fn mirror_census_examples() {
        let c = intra_corpus_mirrors(&[snap("a", "f", "x", 3), snap("b", "f", "x", 3), snap("c", "f", "y", 4)]);
        assert_eq!(c.groups.len(), 1);
        assert_eq!(c.groups[0].mirrors, vec!["a", "b"]);
        assert_eq!(c.groups[0].diverged, vec!["c"]);
        let c = intra_corpus_mirrors(&[snap("a", "1", "x", 3), snap("b", "2", "x", 3)]);
        assert!(c.groups.is_empty());
        assert_eq!(c.grouped_repositories, 0);
    }

    #[test]
    fn intra_reports_follow_groups() {
        let snaps = [snap("a", "f", "x", 3), snap("b", "f", "x", 3), snap("c", "f", "y", 4), snap("d", "g", "z", 1)];
        let r = intra_corpus_reports(&snaps, Utc::now());
        let classes: Vec<_> = r.iter().map(|r| r.class).collect();
        use OverlapClass::*;
        assert_eq!(classes, vec![DuplicateComplete, DuplicateComplete, Diverged, Novel]);
    }

    #[test]
    fn margin_filter_partitions() {
        let snaps = [snap("n", "1", "1", 1), snap("d", "2", "3", 2), snap("c", "4", "5", 2), snap("p", "6", "7", 2)];
        let rep = |id: &str, class| OverlapReport {
            repo_id: id.into(),
            target: OverlapTarget::Github,
            first_hash_found: class != OverlapClass::Novel,
            last_hash_found: None,
            class,
            queried_at: Utc::now(),
        };
        let mut reports = vec![
            rep("n", OverlapClass::Novel),
            rep("d", OverlapClass::Diverged),
            rep("c", OverlapClass::DuplicateComplete),
        ];
        // reports against other targets are ignored
        let mut sh = rep("p", OverlapClass::Novel);
        sh.target = OverlapTarget::SoftwareHeritage;
        reports.push(sh);
        let split = margin_filter(&snaps, &reports);
        assert_eq!(split.eligible, vec!["n"]);
        assert_eq!(split.excluded, vec!["d", "c"]);
        assert_eq!(split.pending, vec!["p"]);
    }

    proptest! {
        /// Planted partition: groups of known composition plus singletons.
        #[test]
        fn planted_census(groups in prop::collection::vec((0usize..4, 0usize..4, 0usize..3), 0..8), singles in 0usize..10) {
            let mut snaps = Vec::new();
            let (mut exp_groups, mut exp_mirrors, mut exp_div) = (0, 0, 0);
            let mut id = 0;
            for (g, (pair_a, pair_b, div)) in groups.iter().enumerate() {
                // pair_a copies share last hash "a", pair_b copies share "b",
                // each diverged member has its own last hash
                let a = if *pair_a >= 2 { *pair_a } else { 0 };
                let b = if *pair_b >= 2 { *pair_b } else { 0 };
                let size = a + b + div;
                if size < 2 { continue; }
                exp_groups += 1;
                exp_mirrors += a + b;
                exp_div += div;
                for _ in 0..a { snaps.push(snap(&format!("r{id}"), &format!("g{g}"), &format!("g{g}a"), 2)); id += 1; }
                for _ in 0..b { snaps.push(snap(&format!("r{id}"), &format!("g{g}"), &format!("g{g}b"), 2)); id += 1; }
                for k in 0..*div { snaps.push(snap(&format!("r{id}"), &format!("g{g}"), &format!("g{g}d{k}"), 2)); id += 1; }
            }
            for k in 0..singles { snaps.push(snap(&format!("s{k}"), &format!("single{k}"), "x", 2)); }
            let c = intra_corpus_mirrors(&snaps);
            prop_assert_eq!(c.groups.len(), exp_groups);
            prop_assert_eq!(c.mirror_repositories, exp_mirrors);
            prop_assert_eq!(c.diverged_repositories, exp_div);
            prop_assert_eq!(c.repositories, snaps.len());
            let mut seen = HashSet::new();
            for g in &c.groups {
                prop_assert!(g.size() >= 2);
                for m in g.mirrors.iter().chain(&g.diverged) { prop_assert!(seen.insert(m.clone())); }
            }
        }
    }
}
