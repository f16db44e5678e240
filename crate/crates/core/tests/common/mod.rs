#![allow(dead_code)]

pub mod e2e;

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

use chrono::{DateTime, TimeZone, Utc};

pub struct Reply {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn ok(body: impl Into<Vec<u8>>) -> Self {
        Self::status(200, body)
    }

    pub fn json(v: &serde_json::Value) -> Self {
        Self::ok(v.to_string()).header("Content-Type", "application/json")
    }

    pub fn status(status: u16, body: impl Into<Vec<u8>>) -> Self {
        Self {
            status,
            headers: vec![],
            body: body.into(),
        }
    }

    pub fn not_found() -> Self {
        Self::status(404, "not found")
    }

    pub fn header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }
}

type Handler = dyn Fn(&str) -> Reply + Send + Sync;

/// A tiny HTTP/1.1 server on a loopback port: one thread per connection,
/// `Connection: close`, GET only. The handler sees the request target
/// (path plus query).
pub struct FixtureServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    log: Arc<Mutex<Vec<(Instant, String)>>>,
    accept: Option<JoinHandle<()>>,
}

impl FixtureServer {
    pub fn start(handler: impl Fn(&str) -> Reply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let addr = listener.local_addr().unwrap();
        let stop = Arc::new(AtomicBool::new(false));
        let log = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let accept = {
            let stop = stop.clone();
            let log = log.clone();
            std::thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(conn) = conn else { continue };
                    let handler = handler.clone();
                    let log = log.clone();
                    std::thread::spawn(move || serve(conn, &*handler, &log));
                }
            })
        };
        Self {
            addr,
            stop,
            log,
            accept: Some(accept),
        }
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Request targets in arrival order with their arrival times.
    pub fn requests(&self) -> Vec<(Instant, String)> {
        self.log.lock().unwrap().clone()
    }

    pub fn paths(&self) -> Vec<String> {
        self.requests().into_iter().map(|(_, p)| p).collect()
    }
}

impl Drop for FixtureServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn serve(conn: TcpStream, handler: &Handler, log: &Mutex<Vec<(Instant, String)>>) {
    let mut reader = BufReader::new(match conn.try_clone() {
        Ok(c) => c,
        Err(_) => return,
    });
    let mut first = String::new();
    if reader.read_line(&mut first).unwrap_or(0) == 0 {
        return;
    }
    loop {
        let mut line = String::new();
        match reader.read_line(&mut line) {
            Ok(0) | Err(_) => break,
            Ok(_) if line == "\r\n" || line == "\n" => break,
            Ok(_) => {}
        }
    }
    let target = first.split_whitespace().nth(1).unwrap_or("/").to_string();
    log.lock().unwrap().push((Instant::now(), target.clone()));
    let reply = handler(&target);
    let mut out = conn;
    let mut head = format!("HTTP/1.1 {} Fixture\r\nContent-Length: {}\r\nConnection: close\r\n", reply.status, reply.body.len());
    for (k, v) in &reply.headers {
        head.push_str(&format!("{k}: {v}\r\n"));
    }
    head.push_str("\r\n");
    let _ = out.write_all(head.as_bytes());
    let _ = out.write_all(&reply.body);
    let _ = out.flush();
}

/// Serve files under `root` for the request path (query ignored). Paths
/// with `..` are refused.
pub fn serve_file(root: &Path, target: &str) -> Option<Reply> {
    let path = target.split('?').next().unwrap_or("");
    let rel = path.trim_start_matches('/');
    if rel.split('/').any(|c| c == "..") {
        return None;
    }
    let file = root.join(rel);
    if !file.is_file() {
        return None;
    }
    std::fs::read(file).ok().map(Reply::ok)
}

fn git_env(cmd: &mut Command) {
    cmd.env("GIT_CONFIG_NOSYSTEM", "1")
        .env("GIT_CONFIG_GLOBAL", "/dev/null")
        .env("GIT_TERMINAL_PROMPT", "0")
        .env("LC_ALL", "C");
}

pub fn git(dir: &Path, args: &[&str]) -> String {
    let mut cmd = Command::new("git");
    cmd.arg("-C").arg(dir).args(args);
    git_env(&mut cmd);
    let out = cmd.output().expect("run git");
    assert!(
        out.status.success(),
        "git {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).trim().to_string()
}

pub struct Author<'a> {
    pub name: &'a str,
    pub email: &'a str,
}

pub const ALICE: Author = Author {
    name: "Alice",
    email: "alice@cs.uni-example.edu",
};
pub const BOB: Author = Author {
    name: "Bob",
    email: "bob@tinkerworks.io",
};

pub fn ts(secs: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(secs, 0).unwrap()
}

/// A non-bare working repository whose commits carry scripted authors and
/// timestamps.
pub struct WorkRepo {
    pub path: PathBuf,
}

impl WorkRepo {
    pub fn init(path: &Path) -> Self {
        std::fs::create_dir_all(path).unwrap();
        git(path, &["init", "--quiet", "-b", "main"]);
        Self { path: path.to_path_buf() }
    }

    pub fn write(&self, file: &str, content: &str) {
        let p = self.path.join(file);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).unwrap();
        }
        std::fs::write(p, content).unwrap();
    }

    fn run_as(&self, who: &Author, at: i64, args: &[&str]) -> String {
        let date = format!("@{at} +0000");
        let mut cmd = Command::new("git");
        cmd.arg("-C")
            .arg(&self.path)
            .args(["-c", "commit.gpgsign=false"])
            .args(args);
        git_env(&mut cmd);
        cmd.env("GIT_AUTHOR_NAME", who.name)
            .env("GIT_AUTHOR_EMAIL", who.email)
            .env("GIT_AUTHOR_DATE", &date)
            .env("GIT_COMMITTER_NAME", who.name)
            .env("GIT_COMMITTER_EMAIL", who.email)
            .env("GIT_COMMITTER_DATE", &date);
        let out = cmd.output().expect("run git");
        assert!(
            out.status.success(),
            "git {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8_lossy(&out.stdout).trim().to_string()
    }

    /// Write `files`, stage everything and commit. Returns the commit hash.
    pub fn commit(&self, who: &Author, at: i64, message: &str, files: &[(&str, &str)]) -> String {
        for (f, c) in files {
            self.write(f, c);
        }
        git(&self.path, &["add", "-A"]);
        self.run_as(who, at, &["commit", "--quiet", "--allow-empty", "-m", message]);
        self.head()
    }

    pub fn merge(&self, who: &Author, at: i64, branch: &str, message: &str) -> String {
        self.run_as(who, at, &["merge", "--quiet", "--no-ff", "-m", message, branch]);
        self.head()
    }

    pub fn checkout(&self, args: &[&str]) {
        let mut full = vec!["checkout", "--quiet"];
        full.extend_from_slice(args);
        git(&self.path, &full);
    }

    pub fn head(&self) -> String {
        git(&self.path, &["rev-parse", "HEAD"])
    }

    /// Bare copy at `dest`, prepared for serving over dumb HTTP.
    pub fn publish(&self, dest: &Path) {
        publish_bare(&self.path, dest);
    }
}

pub fn publish_bare(src: &Path, dest: &Path) {
    if let Some(parent) = dest.parent() {
        std::fs::create_dir_all(parent).unwrap();
    }
    let mut cmd = Command::new("git");
    cmd.args(["clone", "--quiet", "--bare"]).arg(src).arg(dest);
    git_env(&mut cmd);
    assert!(cmd.status().unwrap().success());
    git(dest, &["update-server-info"]);
}

pub fn empty_bare(dest: &Path) {
    std::fs::create_dir_all(dest).unwrap();
    git(dest, &["init", "--quiet", "--bare"]);
    git(dest, &["update-server-info"]);
}

/// 2021-03-01T10:00:00Z
pub const T0: i64 = 1_614_592_800;
pub const HOUR: i64 = 3600;

pub struct Scripted {
    pub hashes: Vec<String>,
}

/// Six commits by two authors with one merge, ending with three head files
/// and two branches (`main`, `feature`):
///
/// | # | author | time     | branch  | change               | message            |
/// |---|--------|----------|---------|----------------------|--------------------|
/// | 1 | alice  | t0       | main    | add app.py           | add app            |
/// | 2 | bob    | t0+1h    | main    | add README.md        | add readme         |
/// | 3 | bob    | t0+24h   | feature | edit app.py          | edit app on feature|
/// | 4 | alice  | t0+25h   | main    | add lib.py           | add lib            |
/// | 5 | alice  | t0+26h   | main    | merge feature        | merge feature      |
/// | 6 | bob    | t0+72h   | main    | edit README.md       | edit readme        |
pub fn six_commit_repo(path: &Path) -> (WorkRepo, Scripted) {
    let w = WorkRepo::init(path);
    let mut hashes = Vec::new();
    hashes.push(w.commit(&ALICE, T0, "add app", &[("app.py", "import sys\n# entry\nprint(sys.argv)\n")]));
    hashes.push(w.commit(&BOB, T0 + HOUR, "add readme", &[("README.md", "# Demo\n\nfirst\n")]));
    w.checkout(&["-b", "feature"]);
    hashes.push(w.commit(
        &BOB,
        T0 + 24 * HOUR,
        "edit app on feature",
        &[("app.py", "import sys\n# entry\nprint(sys.argv[1:])\n")],
    ));
    w.checkout(&["main"]);
    hashes.push(w.commit(&ALICE, T0 + 25 * HOUR, "add lib", &[("lib.py", "def f():\n    return 1\n")]));
    hashes.push(w.merge(&ALICE, T0 + 26 * HOUR, "feature", "merge feature"));
    hashes.push(w.commit(
        &BOB,
        T0 + 72 * HOUR,
        "edit readme",
        &[("README.md", "# Demo\n\nfirst\nsecond\nthird\nfourth\n\n- fifth\n")],
    ));
    (w, Scripted { hashes })
}

/// Hand-computed metrics for [`six_commit_repo`] once cloned with its two
/// branches as remote-tracking refs.
pub fn six_commit_oracle(repo_id: &str) -> penumbra_core::metrics::RepoMetrics {
    penumbra_core::metrics::RepoMetrics {
        repo_id: repo_id.to_string(),
        files: 3,
        committers: 2,
        commits: 6,
        branches: 2,
        // 7 + 10 + 19 + 7 + 13 + 11 characters
        avg_message_length: 67.0 / 6.0,
        // app.py {alice, bob}, README.md {bob}, lib.py {alice}
        avg_editors_per_file: Some(4.0 / 3.0),
        // 72 h over 5 gaps
        mean_interevent_hours: Some(72.0 / 5.0),
        // daily counts [2, 3, 0, 1]: mean 3/2, variance 5/4
        burstiness: 5.0 / 6.0,
        age_hours: 72.0,
        lead_workload: 0.5,
        dominated: false,
        effective_team_size: 2.0,
        // Markdown 6 lines in 1 file, Python 4 lines in 2 files
        top_language_by_loc: Some("Markdown".into()),
        top_language_by_files: Some("Python".into()),
    }
}

/// Clone, extract and measure a repository reachable at `url`.
pub fn measure(url: &str, dest: &Path, repo_id: &str) -> penumbra_core::metrics::RepoMetrics {
    use penumbra_core::cloner::{clone_url_into, CloneOutcome};
    use penumbra_core::extract::{extract_repository, GitRepo};
    use penumbra_core::metrics::languages::tally_languages;
    let fetcher = penumbra_core::http::UreqFetcher::new("fixture", std::time::Duration::from_secs(10));
    let outcome = clone_url_into(url, dest, std::time::Duration::from_secs(60), &fetcher);
    assert!(matches!(outcome, CloneOutcome::Success { .. }), "{outcome:?}");
    let repo = GitRepo::open(dest);
    let ex = extract_repository(&repo, repo_id).unwrap();
    let tally = tally_languages(&repo, &ex.head).unwrap();
    penumbra_core::metrics::compute_repo_metrics(&ex.history, &ex.snapshot, &tally).unwrap()
}
