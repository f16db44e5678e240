//! `penumbra run-all` against loopback fixtures: a Gitea-like forge with
//! three dumb-HTTP repositories (a project, its exact mirror and an empty
//! one), a comparison platform, archive stubs and a one-network geo table.
//! Reports must match the committed goldens byte for byte.
//!
//! Regenerate the goldens with `UPDATE_GOLDEN=1 cargo test --test e2e`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use super::*;
use serde_json::json;

const SEED: u64 = 20240611;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    _servers: Vec<FixtureServer>,
}

const GITEA_FRONT: &str = "<!DOCTYPE html><html><head><meta name=\"description\" content=\"Gitea - Git with a cup of tea\"></head>\
<body><footer>Powered by Gitea Version: 1.20.5 Page: 2ms</footer></body></html>";

fn forge(served: PathBuf) -> FixtureServer {
    let repos = [("alice", "thesis"), ("bob", "thesis-mirror"), ("carol", "empty")];
    FixtureServer::start(move |t| {
        if t == "/" {
            return Reply::ok(GITEA_FRONT);
        }
        if t.starts_with("/api/v1/repos/search") {
            let first = t.contains("page=1&") || t.ends_with("page=1");
            let data: Vec<_> = if first {
                repos
                    .iter()
                    .map(|(o, n)| json!({"name": n, "full_name": format!("{o}/{n}"), "owner": {"login": o}}))
                    .collect()
            } else {
                vec![]
            };
            return Reply::json(&json!({"ok": true, "data": data}));
        }
        serve_file(&served, t).unwrap_or_else(Reply::not_found)
    })
}

/// Five small repositories on the comparison platform, all begun in March 2021.
fn comparison_repos(root: &Path) -> Vec<String> {
    const DEV: [Author; 3] = [
        Author {
            name: "Dee",
            email: "dee@hackmail.io",
        },
        Author {
            name: "Eli",
            email: "eli@studio.dev",
        },
        Author {
            name: "Fay",
            email: "fay@mit.edu",
        },
    ];
    let mut names = Vec::new();
    for i in 0..5i64 {
        let w = WorkRepo::init(&root.join(format!("cmp-work/{i}")));
        let start = T0 + (i + 1) * 24 * HOUR;
        for c in 0..(i + 2) {
            let who = &DEV[((c + i) % 3) as usize];
            let file = match c % 3 {
                0 => format!("src/m{c}.js"),
                1 => format!("lib/u{c}.py"),
                _ => "README.md".into(),
            };
            w.commit(who, start + c * (i + 1) * 5 * HOUR, &format!("change {c} of project {i}"), &[(&file, &"x = 1\n".repeat((c + 1) as usize))]);
        }
        let name = format!("dev{i}/proj{i}");
        w.publish(&root.join(format!("cmp-srv/{name}.git")));
        names.push(name);
    }
    names
}

fn build() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let (work, scripted) = six_commit_repo(&root.join("work"));
    work.publish(&root.join("srv/alice/thesis.git"));
    work.publish(&root.join("srv/bob/thesis-mirror.git"));
    empty_bare(&root.join("srv/carol/empty.git"));
    let forge = forge(root.join("srv"));

    let names = comparison_repos(&root);
    let cmp_srv = root.join("cmp-srv");
    let platform = FixtureServer::start(move |t| serve_file(&cmp_srv, t).unwrap_or_else(Reply::not_found));
    let mut events = String::new();
    for (i, n) in names.iter().enumerate() {
        events.push_str(&format!("{{\"repo\":\"{n}\",\"created_at\":\"2021-03-{:02}T08:00:00Z\"}}\n", i + 2));
    }
    events.push_str("{\"type\":\"CreateEvent\",\"repo\":{\"name\":\"late/one\"},\"created_at\":\"2021-04-02T00:00:00Z\"}\n");
    events.push_str("not an event\n");
    std::fs::write(root.join("events.jsonl"), events).unwrap();

    // the archive knows only the first commit of the thesis
    let known = scripted.hashes[0].clone();
    let archives = FixtureServer::start(move |t| {
        if t.starts_with("/search/commits") {
            return Reply::json(&json!({"total_count": 0, "items": []}));
        }
        if let Some(rest) = t.strip_prefix("/api/1/revision/") {
            if rest.trim_end_matches('/') == known {
                return Reply::json(&json!({"id": known}));
            }
        }
        Reply::not_found()
    });

    std::fs::write(root.join("hosts.txt"), format!("# fixture forge\n127.0.0.1:{}\nnot a host!\n", forge.port())).unwrap();
    std::fs::write(root.join("universities.txt"), "uni-example.edu\n").unwrap();
    std::fs::write(
        root.join("geo-blocks.csv"),
        "network,geoname_id,registered_country_geoname_id,represented_country_geoname_id,is_anonymous_proxy,is_satellite_provider\n\
         127.0.0.0/8,2921044,2921044,,0,0\n",
    )
    .unwrap();
    std::fs::write(
        root.join("geo-locations.csv"),
        "geoname_id,locale_code,continent_code,continent_name,country_iso_code,country_name,is_in_european_union\n\
         2921044,en,EU,Europe,DE,Germany,1\n",
    )
    .unwrap();
    std::fs::write(
        root.join("populations.csv"),
        "region,population,github_user_percent\nEU,447000000,24.5\nNA,580000000,31.0\n",
    )
    .unwrap();
    let archive_base = archives.base_url();
    std::fs::write(
        root.join("penumbra.toml"),
        format!(
            r#"seed = 1

[scan]
host_lists = ["hosts.txt"]

[crawl]
rate = 1000.0

[clone]
retries = 1

[comparison]
events = "events.jsonl"
corpus = "github"
base_url = "{}"
oversample_factor = 1.5

[dedup]
github_base = "{archive_base}"
software_heritage_base = "{archive_base}"
rate = 1000.0
retry_rounds = 0

[label]
university_domains = "universities.txt"
geo_blocks = ["geo-blocks.csv"]
geo_locations = "geo-locations.csv"
populations = "populations.csv"

[stats]
rare_language_threshold = 1
"#,
            platform.base_url()
        ),
    )
    .unwrap();
    Fixture {
        _dir: dir,
        root,
        _servers: vec![forge, platform, archives],
    }
}

fn penumbra(fx: &Fixture, store: &str, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_penumbra"))
        .current_dir(&fx.root)
        .args(["--store", store, "--config", "penumbra.toml", "--seed", &SEED.to_string()])
        .args(args)
        .env_remove("GITHUB_TOKEN")
        .env_remove("SWH_TOKEN")
        .env_remove("SHODAN_API_KEY")
        .env("RUST_LOG", "error")
        .output()
        .expect("run penumbra");
    assert!(
        out.status.success(),
        "penumbra {args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        if e.file_type().unwrap().is_file() {
            files.insert(e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap());
        }
    }
    files
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Runs the full pipeline twice in fresh stores and checks both against
/// the goldens. Returns an error message instead of panicking so the
/// acceptance target can report it.
pub fn run_and_compare() -> Result<Duration, String> {
    let started = Instant::now();
    let fx = build();
    let mut outputs = Vec::new();
    for store in ["store-a", "store-b"] {
        let stdout = penumbra(&fx, store, &["run-all"]);
        for stage in ["scan", "probe", "crawl", "clone", "extract", "metrics", "dedup", "label", "stats", "report"] {
            if !stdout.lines().any(|l| l.starts_with(&format!("{stage}: "))) {
                return Err(format!("stage {stage} did not report:\n{stdout}"));
            }
        }
        outputs.push(read_tree(&fx.root.join(store).join("reports")));
    }
    let rerun = penumbra(&fx, "store-a", &["run-all"]);
    if rerun.lines().count() != 10 || !rerun.lines().all(|l| l.ends_with(": up to date")) {
        return Err(format!("second run-all redid work:\n{rerun}"));
    }
    let outs = outputs;
    if outs[0] != outs[1] {
        return Err("two runs under the same seed produced different reports".into());
    }
    let dist = fx.root.join("store-a/exports/distributions");
    for corpus in ["penumbra", "github"] {
        if !dist.join(corpus).join("burstiness.csv").is_file() {
            return Err(format!("missing distribution export for {corpus}"));
        }
    }
    if !fx.root.join("store-a/exports/metrics.csv").is_file() {
        return Err("missing metrics export".into());
    }

    let golden = golden_dir();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(&golden).unwrap();
        for (name, bytes) in &outs[0] {
            std::fs::write(golden.join(name), bytes).unwrap();
        }
    }
    let expected = read_tree(&golden);
    if expected.is_empty() {
        return Err("no golden files; run with UPDATE_GOLDEN=1".into());
    }
    if expected.keys().collect::<Vec<_>>() != outs[0].keys().collect::<Vec<_>>() {
        return Err(format!(
            "report file set differs: {:?} vs golden {:?}",
            outs[0].keys().collect::<Vec<_>>(),
            expected.keys().collect::<Vec<_>>()
        ));
    }
    for (name, bytes) in &expected {
        if &outs[0][name] != bytes {
            return Err(format!(
                "{name} differs from golden:\n--- got\n{}\n--- golden\n{}",
                String::from_utf8_lossy(&outs[0][name]),
                String::from_utf8_lossy(bytes)
            ));
        }
    }
    Ok(started.elapsed())
}
