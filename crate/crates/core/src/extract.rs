//! Commit metadata and head-snapshot extraction from bare clones.
//!
//! All reads go through the system `git` executable in plumbing mode:
//! `rev-list` for the reachable set, `cat-file --batch` for raw commit and
//! blob objects, `log --name-only` for first-parent changed paths and
//! `ls-tree` for the head listing.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("repository has no branches")]
    Unresolvable,
    #[error("git {command}: {message}")]
    Git { command: String, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitMeta {
    pub hash: String,
    /// Lowercased author email.
    pub author_email: String,
    pub author_time: DateTime<Utc>,
    pub message_length: usize,
    pub parent_hashes: Vec<String>,
    pub changed_paths: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoSnapshot {
    pub repo_id: String,
    pub main_branch: String,
    pub head_paths: Vec<String>,
    pub remote_branch_count: usize,
    pub first_commit_hash: String,
    pub last_commit_hash: String,
    pub commit_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MainBranch {
    /// Short name, e.g. `develop`.
    pub name: String,
    /// Fully qualified ref, e.g. `refs/remotes/origin/develop`.
    pub refname: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadEntry {
    pub path: String,
    pub oid: String,
}

/// Lowercase an email address. Idempotent.
pub fn normalize_email(email: &str) -> String {
    email.trim().to_lowercase()
}

/// Character count of a commit message after lenient decoding, with
/// surrounding whitespace (git's trailing newline included) removed.
pub fn message_length(raw: &[u8]) -> usize {
    String::from_utf8_lossy(raw).trim().chars().count()
}

/// A bare (or regular) repository on disk.
#[derive(Debug, Clone)]
pub struct GitRepo {
    path: PathBuf,
}

struct RefEntry {
    name: String,
    symref: String,
}

impl GitRepo {
    pub fn open(path: &Path) -> Self {
        Self {
            path: path.to_path_buf(),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn command(&self) -> Command {
        let mut c = Command::new("git");
        c.arg("-C")
            .arg(&self.path)
            .args(["-c", "core.quotePath=false", "-c", "log.showSignature=false"])
            .env("LC_ALL", "C")
            .env("GIT_CONFIG_NOSYSTEM", "1");
        c
    }

    fn run(&self, args: &[&str]) -> Result<Vec<u8>, ExtractError> {
        let out = self.command().args(args).stdin(Stdio::null()).output()?;
        if !out.status.success() {
            return Err(ExtractError::Git {
                command: args.first().copied().unwrap_or_default().to_string(),
                message: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            });
        }
        Ok(out.stdout)
    }

    /// Feed `input` to a `git cat-file --batch` style process and collect stdout.
    fn run_batch(&self, args: &[&str], input: Vec<u8>) -> Result<Vec<u8>, ExtractError> {
        let mut child = self
            .command()
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || {
            let _ = stdin.write_all(&input);
        });
        let mut stdout = Vec::new();
        child.stdout.take().expect("piped stdout").read_to_end(&mut stdout)?;
        let mut stderr = String::new();
        child.stderr.take().expect("piped stderr").read_to_string(&mut stderr)?;
        let _ = writer.join();
        let status = child.wait()?;
        if !status.success() {
            return Err(ExtractError::Git {
                command: args.first().copied().unwrap_or_default().to_string(),
                message: stderr.trim().to_string(),
            });
        }
        Ok(stdout)
    }

    fn refs(&self) -> Result<Vec<RefEntry>, ExtractError> {
        let out = self.run(&[
            "for-each-ref",
            "--format=%(refname)%00%(symref)",
            "refs/remotes",
            "refs/heads",
        ])?;
        Ok(String::from_utf8_lossy(&out)
            .lines()
            .filter_map(|l| {
                let (name, symref) = l.split_once('\0')?;
                Some(RefEntry {
                    name: name.to_string(),
                    symref: symref.to_string(),
                })
            })
            .collect())
    }

    fn ref_exists(&self, refname: &str) -> bool {
        self.command()
            .args(["rev-parse", "--verify", "--quiet", &format!("{refname}^{{commit}}")])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .is_ok_and(|s| s.success())
    }

    /// The branch whose history defines the repository: remote HEAD target
    /// if present, else `main`, else `master`, else the lexicographically
    /// first remote branch. Local branches are consulted only when the
    /// repository has no remote-tracking refs.
    pub fn resolve_main_branch(&self) -> Result<MainBranch, ExtractError> {
        let refs = self.refs()?;
        let remote: Vec<&RefEntry> = refs.iter().filter(|r| r.name.starts_with("refs/remotes/")).collect();
        if !remote.is_empty() {
            for r in &remote {
                if r.name.ends_with("/HEAD") && !r.symref.is_empty() && self.ref_exists(&r.symref) {
                    return Ok(main_from_ref(&r.symref));
                }
            }
            let mut branches: Vec<&str> = remote
                .iter()
                .filter(|r| r.symref.is_empty() && !r.name.ends_with("/HEAD"))
                .map(|r| r.name.as_str())
                .collect();
            branches.sort_unstable_by_key(|n| short_branch(n));
            return pick_branch(&branches).ok_or(ExtractError::Unresolvable);
        }
        let mut heads: Vec<&str> = refs
            .iter()
            .filter(|r| r.name.starts_with("refs/heads/"))
            .map(|r| r.name.as_str())
            .collect();
        if heads.is_empty() {
            return Err(ExtractError::Unresolvable);
        }
        if let Ok(out) = self.run(&["symbolic-ref", "-q", "HEAD"]) {
            let target = String::from_utf8_lossy(&out).trim().to_string();
            if heads.contains(&target.as_str()) && self.ref_exists(&target) {
                return Ok(main_from_ref(&target));
            }
        }
        heads.sort_unstable_by_key(|n| short_branch(n));
        pick_branch(&heads).ok_or(ExtractError::Unresolvable)
    }

    /// Remote branch refs, excluding the `<remote>/HEAD` alias. Falls back to
    /// local branches for repositories without remote-tracking refs.
    pub fn count_branches(&self) -> Result<usize, ExtractError> {
        let refs = self.refs()?;
        let remote = refs
            .iter()
            .filter(|r| r.name.starts_with("refs/remotes/") && !r.name.ends_with("/HEAD"))
            .count();
        if remote > 0 || refs.iter().any(|r| r.name.starts_with("refs/remotes/")) {
            return Ok(remote);
        }
        Ok(refs.iter().filter(|r| r.name.starts_with("refs/heads/")).count())
    }

    /// Every commit reachable from the main branch head, ordered by author
    /// time then hash.
    pub fn extract_history(&self, main: &MainBranch) -> Result<Vec<CommitMeta>, ExtractError> {
        let listed = self.run(&["rev-list", &main.refname])?;
        let hashes: Vec<String> = String::from_utf8_lossy(&listed)
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        let mut input = Vec::with_capacity(hashes.len() * 41);
        for h in &hashes {
            input.extend_from_slice(h.as_bytes());
            input.push(b'\n');
        }
        let raw = self.run_batch(&["cat-file", "--batch"], input)?;
        let objects = parse_batch_output(&raw);

        let (paths, path_error) = match self.changed_paths(main) {
            Ok(p) => (p, None),
            Err(e) => (HashMap::new(), Some(format!("changed paths unavailable: {e}"))),
        };

        let mut commits: Vec<CommitMeta> = hashes
            .iter()
            .map(|h| {
                let mut meta = match objects.get(h.as_str()) {
                    Some(BatchObject::Found { kind, body }) if kind == "commit" => parse_commit(h, body),
                    Some(BatchObject::Found { kind, .. }) => broken_commit(h, format!("object is a {kind}")),
                    Some(BatchObject::Missing) | None => broken_commit(h, "object missing".into()),
                };
                match paths.get(h.as_str()) {
                    Some(p) => meta.changed_paths = p.clone(),
                    None => {
                        if let Some(e) = &path_error {
                            meta.extraction_error.get_or_insert_with(|| e.clone());
                        }
                    }
                }
                meta
            })
            .collect();
        commits.sort_by(|a, b| a.author_time.cmp(&b.author_time).then_with(|| a.hash.cmp(&b.hash)));
        Ok(commits)
    }

    /// Paths changed by each commit: first-parent diff for merges, every
    /// introduced path for root commits. Renames are not detected.
    fn changed_paths(&self, main: &MainBranch) -> Result<HashMap<String, Vec<String>>, ExtractError> {
        let out = self.run(&[
            "log",
            "--no-renames",
            "--diff-merges=first-parent",
            "--name-only",
            "-z",
            "--format=%x01%H",
            &main.refname,
        ])?;
        Ok(parse_name_only_log(&out))
    }

    /// Blob entries of the main head tree, excluding symlinks and submodules.
    pub fn head_entries(&self, main: &MainBranch) -> Result<Vec<HeadEntry>, ExtractError> {
        let out = self.run(&["ls-tree", "-r", "-z", "--full-tree", &main.refname])?;
        let mut entries = Vec::new();
        for rec in out.split(|b| *b == 0).filter(|r| !r.is_empty()) {
            let rec = String::from_utf8_lossy(rec);
            let Some((meta, path)) = rec.split_once('\t') else { continue };
            let mut parts = meta.split_whitespace();
            let (Some(mode), Some(kind), Some(oid)) = (parts.next(), parts.next(), parts.next()) else {
                continue;
            };
            if kind == "blob" && mode.starts_with("100") {
                entries.push(HeadEntry {
                    path: path.to_string(),
                    oid: oid.to_string(),
                });
            }
        }
        Ok(entries)
    }

    pub fn head_file_list(&self, main: &MainBranch) -> Result<Vec<String>, ExtractError> {
        Ok(self.head_entries(main)?.into_iter().map(|e| e.path).collect())
    }

    /// Read blob contents by object id. Unreadable blobs map to `None`.
    pub fn read_blobs(&self, oids: &[&str]) -> Result<Vec<Option<Vec<u8>>>, ExtractError> {
        let mut input = Vec::new();
        for oid in oids {
            input.extend_from_slice(oid.as_bytes());
            input.push(b'\n');
        }
        let raw = self.run_batch(&["cat-file", "--batch"], input)?;
        let objects = parse_batch_output(&raw);
        Ok(oids
            .iter()
            .map(|oid| match objects.get(*oid) {
                Some(BatchObject::Found { kind, body }) if kind == "blob" => Some(body.to_vec()),
                _ => None,
            })
            .collect())
    }
}

fn short_branch(refname: &str) -> &str {
    if let Some(rest) = refname.strip_prefix("refs/remotes/") {
        rest.split_once('/').map_or(rest, |(_, b)| b)
    } else {
        refname.strip_prefix("refs/heads/").unwrap_or(refname)
    }
}

fn main_from_ref(refname: &str) -> MainBranch {
    MainBranch {
        name: short_branch(refname).to_string(),
        refname: refname.to_string(),
    }
}

fn pick_branch(sorted: &[&str]) -> Option<MainBranch> {
    ["main", "master"]
        .iter()
        .find_map(|want| sorted.iter().find(|r| short_branch(r) == *want))
        .or_else(|| sorted.first())
        .map(|r| main_from_ref(r))
}

enum BatchObject<'a> {
    Found { kind: String, body: &'a [u8] },
    Missing,
}

fn parse_batch_output(raw: &[u8]) -> HashMap<&str, BatchObject<'_>> {
    let mut out = HashMap::new();
    let mut pos = 0;
    while pos < raw.len() {
        let Some(nl) = raw[pos..].iter().position(|b| *b == b'\n') else { break };
        let header = std::str::from_utf8(&raw[pos..pos + nl]).unwrap_or_default();
        pos += nl + 1;
        let parts: Vec<&str> = header.split(' ').collect();
        match parts.as_slice() {
            [oid, "missing"] | [oid, "ambiguous"] => {
                out.insert(*oid, BatchObject::Missing);
            }
            [oid, kind, size] => {
                let size: usize = size.parse().unwrap_or(0);
                let end = (pos + size).min(raw.len());
                out.insert(
                    *oid,
                    BatchObject::Found {
                        kind: kind.to_string(),
                        body: &raw[pos..end],
                    },
                );
                pos = end + 1;
            }
            _ => break,
        }
    }
    out
}

fn broken_commit(hash: &str, why: String) -> CommitMeta {
    CommitMeta {
        hash: hash.to_string(),
        author_email: String::new(),
        author_time: Utc.timestamp_opt(0, 0).unwrap(),
        message_length: 0,
        parent_hashes: Vec::new(),
        changed_paths: Vec::new(),
        extraction_error: Some(why),
    }
}

/// Parse a raw commit object body.
pub fn parse_commit(hash: &str, body: &[u8]) -> CommitMeta {
    let split = body.windows(2).position(|w| w == b"\n\n");
    let (headers, message) = match split {
        Some(i) => (&body[..i], &body[i + 2..]),
        None => (body, &b""[..]),
    };
    let headers = String::from_utf8_lossy(headers);
    let mut parents = Vec::new();
    let mut author: Option<(String, i64)> = None;
    for line in headers.lines() {
        if line.starts_with(' ') {
            continue; // continuation of a multi-line header such as gpgsig
        }
        if let Some(p) = line.strip_prefix("parent ") {
            parents.push(p.trim().to_string());
        } else if let Some(a) = line.strip_prefix("author ") {
            author = parse_signature(a);
        }
    }
    let mut meta = CommitMeta {
        hash: hash.to_string(),
        author_email: String::new(),
        author_time: Utc.timestamp_opt(0, 0).unwrap(),
        message_length: message_length(message),
        parent_hashes: parents,
        changed_paths: Vec::new(),
        extraction_error: None,
    };
    match author.and_then(|(email, ts)| Utc.timestamp_opt(ts, 0).single().map(|t| (email, t))) {
        Some((email, time)) => {
            meta.author_email = normalize_email(&email);
            meta.author_time = time;
        }
        None => meta.extraction_error = Some("malformed author header".into()),
    }
    meta
}

/// `Name <email> 1700000000 +0100` → (email, unix seconds).
fn parse_signature(sig: &str) -> Option<(String, i64)> {
    let open = sig.rfind('<')?;
    let close = sig[open..].find('>')? + open;
    let email = sig[open + 1..close].to_string();
    let ts = sig[close + 1..].split_whitespace().next()?.parse().ok()?;
    Some((email, ts))
}

fn parse_name_only_log(out: &[u8]) -> HashMap<String, Vec<String>> {
    let mut map = HashMap::new();
    for chunk in out.split(|b| *b == 0x01).filter(|c| !c.is_empty()) {
        let mut fields = chunk.split(|b| *b == 0);
        let Some(hash) = fields.next() else { continue };
        let hash = String::from_utf8_lossy(hash).trim().to_string();
        let paths: Vec<String> = fields
            .map(|p| String::from_utf8_lossy(p).trim_start_matches('\n').to_string())
            .filter(|p| !p.is_empty())
            .collect();
        map.insert(hash, paths);
    }
    map
}

/// Everything extracted from one repository.
#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    pub history: Vec<CommitMeta>,
    pub snapshot: RepoSnapshot,
    pub head: Vec<HeadEntry>,
}

/// Run every extraction step on a cloned repository.
pub fn extract_repository(repo: &GitRepo, repo_id: &str) -> Result<Extracted, ExtractError> {
    let main = repo.resolve_main_branch()?;
    let history = repo.extract_history(&main)?;
    if history.is_empty() {
        return Err(ExtractError::Unresolvable);
    }
    let head = repo.head_entries(&main)?;
    let snapshot = RepoSnapshot {
        repo_id: repo_id.to_string(),
        main_branch: main.name.clone(),
        head_paths: head.iter().map(|e| e.path.clone()).collect(),
        remote_branch_count: repo.count_branches()?,
        first_commit_hash: history.first().expect("non-empty").hash.clone(),
        last_commit_hash: history.last().expect("non-empty").hash.clone(),
        commit_count: history.len(),
    };
    Ok(Extracted { history, snapshot, head })
}

/// One line of a per-repository extraction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ExtractRecord {
    Commit(CommitMeta),
    Snapshot(RepoSnapshot),
}

/// Split a per-repository extraction file back into history and snapshot.
pub fn split_records(records: Vec<ExtractRecord>) -> (Vec<CommitMeta>, Option<RepoSnapshot>) {
    let mut history = Vec::new();
    let mut snapshot = None;
    for r in records {
        match r {
            ExtractRecord::Commit(c) => history.push(c),
            ExtractRecord::Snapshot(s) => snapshot = Some(s),
        }
    }
    (history, snapshot)
}

/// Group commits by author email (counts per contributor).
pub fn commits_per_author(history: &[CommitMeta]) -> BTreeMap<String, u64> {
    let mut m = BTreeMap::new();
    for c in history {
        *m.entry(c.author_email.clone()).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_object_parsing() {
        let body = b"tree 4b825dc642cb6eb9a060e54bf8d69288fbee4904\n\
parent 1111111111111111111111111111111111111111\n\
parent 2222222222222222222222222222222222222222\n\
author Alice <Alice@Uni.EDU> 1614592800 +0100\n\
committer Bob <bob@x.org> 1614600000 +0000\n\
gpgsig -----BEGIN PGP SIGNATURE-----\n \n wsBcBAABCAAQ\n -----END PGP SIGNATURE-----\n\
\n\
merge feature\n\nwith body\n";
        let c = parse_commit("abc", body);
        assert_eq!(c.author_email, "alice@uni.edu");
        assert_eq!(c.author_time.timestamp(), 1614592800);
        assert_eq!(c.parent_hashes.len(), 2);
        assert_eq!(c.message_length, "merge feature\n\nwith body".chars().count());
        assert!(c.extraction_error.is_none());
    }

    #[test]
    fn malformed_author_is_annotated() {
        let c = parse_commit("abc", b"tree x\nauthor nobody\n\nmsg\n");
        assert!(c.extraction_error.is_some());
        assert_eq!(c.message_length, 3);
    }

    #[test]
    fn message_length_counts_characters_leniently() {
        assert_eq!(message_length("héllo\n".as_bytes()), 5);
        assert_eq!(message_length(b"a\nb\n"), 3);
        assert_eq!(message_length(b"\xffok"), 3);
        assert_eq!(message_length(b""), 0);
    }

    #[test]
    fn email_normalization_is_idempotent() {
        let once = normalize_email(" Dev@UVM.edu ");
        assert_eq!(once, "dev@uvm.edu");
        assert_eq!(normalize_email(&once), once);
    }

    #[test]
    fn name_only_log_parsing() {
        let raw = b"\x01aaa\0\nx\0y\0\x01bbb\0\x01ccc\0\nz\0";
        let m = parse_name_only_log(raw);
        assert_eq!(m["aaa"], vec!["x", "y"]);
        assert!(m["bbb"].is_empty());
        assert_eq!(m["ccc"], vec!["z"]);
    }

    #[test]
    fn batch_output_parsing() {
        let raw = b"aaa blob 3\nxyz\nbbb missing\nccc commit 0\n\n";
        let m = parse_batch_output(raw);
        assert!(matches!(m["aaa"], BatchObject::Found { ref kind, body } if kind == "blob" && body == b"xyz"));
        assert!(matches!(m["bbb"], BatchObject::Missing));
        assert!(matches!(m["ccc"], BatchObject::Found { body, .. } if body.is_empty()));
    }

    #[test]
    fn branch_fallback_order() {
        let b = |v: &[&str]| pick_branch(v).map(|m| m.name);
        assert_eq!(b(&["refs/remotes/origin/dev", "refs/remotes/origin/main"]).as_deref(), Some("main"));
        assert_eq!(b(&["refs/remotes/origin/a", "refs/remotes/origin/master"]).as_deref(), Some("master"));
        assert_eq!(b(&["refs/remotes/origin/trunk"]).as_deref(), Some("trunk"));
        assert_eq!(b(&[]), None);
    }
}
