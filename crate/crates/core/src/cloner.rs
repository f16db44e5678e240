//! Bare cloning of enumerated repositories.
//!
//! A clone is a bare repository with every remote branch fetched into
//! `refs/remotes/origin/*` and `origin/HEAD` pointing at the remote default
//! branch. Before touching git, the smart-HTTP discovery URL is probed so
//! redirects and authentication challenges are classified without following
//! them.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use log::{debug, info, warn};
use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crawler::RepoRef;
use crate::fingerprint::HostKey;
use crate::http::HttpFetcher;
use crate::jsonl::{self, Appender, JsonlError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum CloneOutcome {
    Success { local_path: PathBuf },
    Redirected { target: String },
    AuthRequired,
    Failed { reason: String },
    Empty,
}

impl CloneOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            CloneOutcome::Success { .. } => "success",
            CloneOutcome::Redirected { .. } => "redirected",
            CloneOutcome::AuthRequired => "auth_required",
            CloneOutcome::Failed { .. } => "failed",
            CloneOutcome::Empty => "empty",
        }
    }

    /// Outcomes that are never retried.
    pub fn is_terminal(&self) -> bool {
        !matches!(self, CloneOutcome::Failed { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloneLimits {
    pub timeout: Duration,
    /// Additional attempts after a failed clone.
    pub retries: u32,
    /// Repositories cloned at the same time (at most one per host).
    pub concurrency: usize,
}

impl Default for CloneLimits {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30 * 60),
            retries: 2,
            concurrency: 8,
        }
    }
}

const PATH_UNSAFE: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_');

fn encode_segment(s: &str) -> String {
    let enc = utf8_percent_encode(s, PATH_UNSAFE).to_string();
    // "." and ".." are not usable as directory names
    match enc.as_str() {
        "." => "%2E".into(),
        ".." => "%2E%2E".into(),
        _ => enc,
    }
}

/// `dest_root/<address>_<port>/<owner>/<name>.git`, each component
/// percent-encoded. Pure function of (host, owner, name).
pub fn local_path(dest_root: &Path, host: &HostKey, owner: &str, name: &str) -> PathBuf {
    dest_root
        .join(format!("{}_{}", encode_segment(&host.address), host.port))
        .join(encode_segment(owner))
        .join(format!("{}.git", encode_segment(name)))
}

pub fn local_path_for(dest_root: &Path, repo: &RepoRef) -> PathBuf {
    local_path(dest_root, &repo.host, &repo.owner, &repo.name)
}

fn git(dir: &Path) -> Command {
    let mut cmd = Command::new("git");
    cmd.arg("-C")
        .arg(dir)
        .env("GIT_TERMINAL_PROMPT", "0")
        .env("GIT_ASKPASS", "true")
        .env("GCM_INTERACTIVE", "never")
        .env("LC_ALL", "C")
        .stdin(Stdio::null());
    cmd
}

enum RunError {
    Timeout,
    Spawn(String),
    Exit(String),
}

/// Run `cmd` to completion, killing it once `timeout` elapses.
fn run_with_timeout(mut cmd: Command, timeout: Duration) -> Result<(), RunError> {
    let mut child = cmd
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| RunError::Spawn(e.to_string()))?;
    let mut stderr = child.stderr.take().expect("piped stderr");
    let reader = std::thread::spawn(move || {
        let mut buf = String::new();
        let _ = stderr.read_to_string(&mut buf);
        buf
    });
    let start = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if start.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                let _ = reader.join();
                return Err(RunError::Timeout);
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(20)),
            Err(e) => return Err(RunError::Spawn(e.to_string())),
        }
    };
    let err = reader.join().unwrap_or_default();
    if status.success() {
        Ok(())
    } else {
        Err(RunError::Exit(err.trim().to_string()))
    }
}

fn classify_git_failure(stderr: &str) -> CloneOutcome {
    let lower = stderr.to_ascii_lowercase();
    if lower.contains("authentication failed")
        || lower.contains("could not read username")
        || lower.contains("could not read password")
        || lower.contains("error: 401")
        || lower.contains("error: 403")
    {
        return CloneOutcome::AuthRequired;
    }
    if lower.contains("redirect") {
        return CloneOutcome::Redirected { target: String::new() };
    }
    let tail: Vec<&str> = stderr.lines().rev().take(3).collect();
    let reason = tail.into_iter().rev().collect::<Vec<_>>().join(" | ");
    CloneOutcome::Failed {
        reason: if reason.is_empty() { "git exited with an error".into() } else { reason },
    }
}

/// Probe `<url>/info/refs?service=git-upload-pack` without following
/// redirects. Returns an outcome when the probe alone decides the clone.
fn preflight(url: &str, fetcher: &dyn HttpFetcher) -> Option<CloneOutcome> {
    let probe = format!("{}/info/refs?service=git-upload-pack", url.trim_end_matches('/'));
    match fetcher.get(&probe, &[]) {
        Ok(resp) if resp.is_redirect() => {
            let target = resp.header("location").unwrap_or_default().to_string();
            Some(CloneOutcome::Redirected { target })
        }
        Ok(resp) if resp.is_auth_challenge() => Some(CloneOutcome::AuthRequired),
        Ok(resp) if resp.is_success() => None,
        Ok(resp) => Some(CloneOutcome::Failed {
            reason: format!("HTTP {} on ref discovery", resp.status),
        }),
        Err(e) => Some(CloneOutcome::Failed { reason: e.to_string() }),
    }
}

fn commit_count(dir: &Path) -> Option<u64> {
    let out = git(dir).args(["rev-list", "--all", "--count"]).output().ok()?;
    if !out.status.success() {
        return None;
    }
    String::from_utf8_lossy(&out.stdout).trim().parse().ok()
}

/// Clone one repository into its deterministic location under `dest_root`.
pub fn clone_repo(
    repo: &RepoRef,
    dest_root: &Path,
    limits: &CloneLimits,
    fetcher: &dyn HttpFetcher,
) -> CloneOutcome {
    let dest = local_path_for(dest_root, repo);
    clone_url_into(&repo.clone_url, &dest, limits.timeout, fetcher)
}

/// Bare-clone `url` into `dest`, replacing anything left there by an
/// interrupted attempt. `file://` URLs and plain paths skip the HTTP probe.
pub fn clone_url_into(url: &str, dest: &Path, timeout: Duration, fetcher: &dyn HttpFetcher) -> CloneOutcome {
    if dest.exists() {
        if let Err(e) = fs::remove_dir_all(dest) {
            return CloneOutcome::Failed {
                reason: format!("cannot clear {}: {e}", dest.display()),
            };
        }
    }
    let is_http = url.starts_with("http://") || url.starts_with("https://");
    if is_http {
        if let Some(outcome) = preflight(url, fetcher) {
            return outcome;
        }
    }
    let outcome = fetch_bare(url, dest, timeout);
    if !matches!(outcome, CloneOutcome::Success { .. }) && dest.exists() {
        let _ = fs::remove_dir_all(dest);
    }
    outcome
}

fn fetch_bare(url: &str, dest: &Path, timeout: Duration) -> CloneOutcome {
    if let Err(e) = fs::create_dir_all(dest) {
        return CloneOutcome::Failed {
            reason: format!("cannot create {}: {e}", dest.display()),
        };
    }
    let started = Instant::now();
    let steps: [&[&str]; 2] = [&["init", "--quiet", "--bare"], &["remote", "add", "origin", url]];
    for args in steps {
        if let Err(e) = run_with_timeout(
            {
                let mut c = git(dest);
                c.args(args);
                c
            },
            timeout,
        ) {
            return run_error(e);
        }
    }
    let mut fetch = git(dest);
    fetch.args([
        "-c",
        "http.followRedirects=false",
        "fetch",
        "--quiet",
        "--no-tags",
        "origin",
        "+refs/heads/*:refs/remotes/origin/*",
    ]);
    let remaining = timeout.saturating_sub(started.elapsed());
    if let Err(e) = run_with_timeout(fetch, remaining) {
        return run_error(e);
    }
    match commit_count(dest) {
        Some(0) | None => return CloneOutcome::Empty,
        Some(n) => debug!("{url}: {n} commits"),
    }
    // Best effort: record the remote default branch as origin/HEAD.
    let mut set_head = git(dest);
    set_head.args(["remote", "set-head", "origin", "--auto"]);
    let remaining = timeout.saturating_sub(started.elapsed());
    if let Err(RunError::Timeout) = run_with_timeout(set_head, remaining) {
        return CloneOutcome::Failed { reason: "timeout".into() };
    }
    CloneOutcome::Success {
        local_path: dest.to_path_buf(),
    }
}

fn run_error(e: RunError) -> CloneOutcome {
    match e {
        RunError::Timeout => CloneOutcome::Failed { reason: "timeout".into() },
        RunError::Spawn(msg) => CloneOutcome::Failed {
            reason: format!("cannot run git: {msg}"),
        },
        RunError::Exit(stderr) => classify_git_failure(&stderr),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloneRecord {
    pub repo_id: String,
    pub attempt: u32,
    #[serde(flatten)]
    pub outcome: CloneOutcome,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Error)]
pub enum CloneError {
    #[error("clone log: {0}")]
    Store(#[from] JsonlError),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Append-only outcome log.
pub struct CloneLog {
    appender: Appender,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepoCloneState {
    pub attempts: u32,
    pub latest: CloneOutcome,
}

impl CloneLog {
    pub fn open(path: &Path) -> Result<Self, JsonlError> {
        Ok(Self {
            appender: Appender::open(path)?,
        })
    }

    pub fn load(&self) -> Result<BTreeMap<String, RepoCloneState>, JsonlError> {
        load_clone_state(self.appender.path())
    }
}

pub fn load_clone_state(path: &Path) -> Result<BTreeMap<String, RepoCloneState>, JsonlError> {
    let mut out: BTreeMap<String, RepoCloneState> = BTreeMap::new();
    for rec in jsonl::read_all::<CloneRecord>(path)? {
        let e = out.entry(rec.repo_id).or_insert(RepoCloneState {
            attempts: 0,
            latest: CloneOutcome::Empty,
        });
        e.attempts = e.attempts.max(rec.attempt);
        e.latest = rec.outcome;
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloneSummary {
    pub outcomes: BTreeMap<String, usize>,
    pub attempts_this_run: usize,
}

/// Clone every reference, persisting each attempt. Terminal outcomes are
/// never retried; failures are retried until `1 + retries` attempts exist.
pub fn clone_corpus(
    refs: &[RepoRef],
    dest_root: &Path,
    limits: &CloneLimits,
    fetcher: &dyn HttpFetcher,
    log: &CloneLog,
) -> Result<CloneSummary, CloneError> {
    use rayon::prelude::*;

    let state = log.load()?;
    let max_attempts = 1 + limits.retries;
    let mut per_host: BTreeMap<&HostKey, Vec<&RepoRef>> = BTreeMap::new();
    for r in refs {
        let done = state
            .get(&r.repo_id())
            .is_some_and(|s| s.latest.is_terminal() || s.attempts >= max_attempts);
        if !done {
            per_host.entry(&r.host).or_default().push(r);
        }
    }
    let hosts: Vec<(&HostKey, Vec<&RepoRef>)> = per_host.into_iter().collect();
    info!(
        "cloning {} repositories across {} hosts",
        hosts.iter().map(|(_, v)| v.len()).sum::<usize>(),
        hosts.len()
    );
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(limits.concurrency.max(1))
        .build()
        .map_err(|e| CloneError::Pool(e.to_string()))?;
    let attempts: usize = pool.install(|| {
        hosts
            .par_iter()
            .map(|(_, repos)| -> Result<usize, CloneError> {
                let mut made = 0;
                for repo in repos {
                    let id = repo.repo_id();
                    let mut attempt = state.get(&id).map_or(0, |s| s.attempts);
                    while attempt < max_attempts {
                        attempt += 1;
                        let outcome = clone_repo(repo, dest_root, limits, fetcher);
                        if let CloneOutcome::Failed { reason } = &outcome {
                            warn!("{id}: attempt {attempt} failed: {reason}");
                        }
                        let terminal = outcome.is_terminal();
                        log.appender.append(&CloneRecord {
                            repo_id: id.clone(),
                            attempt,
                            outcome,
                            at: Utc::now(),
                        })?;
                        made += 1;
                        if terminal {
                            break;
                        }
                    }
                }
                Ok(made)
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))
    })?;

    let state = log.load()?;
    let mut summary = CloneSummary {
        attempts_this_run: attempts,
        ..Default::default()
    };
    for r in refs {
        let label = state.get(&r.repo_id()).map_or("pending", |s| s.latest.label());
        *summary.outcomes.entry(label.to_string()).or_default() += 1;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::Scheme;

    #[test]
    fn local_paths_are_deterministic_and_encoded() {
        let root = Path::new("/data");
        let host = HostKey::new("git.example.org", 3000, Scheme::Http);
        let p = local_path(root, &host, "lab/sub", "my repo");
        assert_eq!(p, Path::new("/data/git.example.org_3000/lab%2Fsub/my%20repo.git"));
        assert_eq!(p, local_path(root, &host, "lab/sub", "my repo"));
        assert_eq!(
            local_path(root, &host, "..", "."),
            Path::new("/data/git.example.org_3000/%2E%2E/%2E.git")
        );
    }

    #[test]
    fn git_stderr_classification() {
        assert_eq!(
            classify_git_failure("fatal: could not read Username for 'https://x': terminal prompts disabled"),
            CloneOutcome::AuthRequired
        );
        assert!(matches!(
            classify_git_failure("fatal: unable to access 'http://x/': Failed to connect"),
            CloneOutcome::Failed { .. }
        ));
    }

    #[test]
    fn outcome_serialization_is_tagged() {
        let rec = CloneRecord {
            repo_id: "h:1/a/b".into(),
            attempt: 1,
            outcome: CloneOutcome::Failed { reason: "timeout".into() },
            at: Utc::now(),
        };
        let s = serde_json::to_string(&rec).unwrap();
        assert!(s.contains(r#""outcome":"failed""#));
        assert_eq!(serde_json::from_str::<CloneRecord>(&s).unwrap(), rec);
    }

    #[test]
    fn timeout_kills_long_running_commands() {
        let mut cmd = Command::new("sleep");
        cmd.arg("5");
        let start = Instant::now();
        assert!(matches!(
            run_with_timeout(cmd, Duration::from_millis(100)),
            Err(RunError::Timeout)
        ));
        assert!(start.elapsed() < Duration::from_secs(3));
    }
}
