use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::comparison::{build_comparison_plan, ingest_comparison_corpus, month_of};
use super::report;
use super::{Pipeline, PipelineError, Stage, REFERENCE_CORPUS};
use crate::cloner::{clone_corpus, load_clone_state, CloneLog, CloneOutcome};
use crate::crawler::{crawl_corpus, load_crawl_state, CrawlStore, HostCrawlStatus, RepoRef};
use crate::dedup::{
    check_corpus, intra_corpus_mirrors, intra_corpus_reports, margin_filter, GithubCommitSearch, HashCache,
    MarginSplit, OverlapReport, SoftwareHeritage,
};
use crate::extract::{extract_repository, split_records, CommitMeta, ExtractRecord, GitRepo, RepoSnapshot};
use crate::fingerprint::{
    dedup_hosts, ingest_host_list, parse_host_entry, probe_hosts, query_scan_api, HostKey, HostRecord, RuleSet,
    ScanWarning, ShodanClient,
};
use crate::http::PoliteFetcher;
use crate::jsonl;
use crate::label::{
    cross_host_emails, filter_fake_emails, geolocate, label_host, CsvGeoDatabase, DomainList, HostProfile,
    SAMPLE_UNIVERSITY_DOMAINS,
};
use crate::metrics::languages::tally_languages;
use crate::metrics::{compute_repo_metrics, unique_emails, write_metrics_csv_file, CorpusMetrics, LanguageTally};

pub(crate) const HOSTS: &str = "hosts.jsonl";
pub(crate) const SCAN_SKIPPED: &str = "scan_skipped.jsonl";
pub(crate) const SCAN_WARNINGS: &str = "scan_warnings.jsonl";
pub(crate) const PROBED: &str = "probed.jsonl";
pub(crate) const CRAWL: &str = "crawl.jsonl";
pub(crate) const CLONES: &str = "clones.jsonl";
pub(crate) const COMPARISON_CLONES: &str = "comparison_clones.jsonl";
pub(crate) const EXTRACT: &str = "extract";
pub(crate) const LANGUAGES: &str = "languages.jsonl";
pub(crate) const METRICS: &str = "metrics.jsonl";
pub(crate) const OVERLAP: &str = "overlap.jsonl";
pub(crate) const OVERLAP_PENDING: &str = "overlap_pending.jsonl";
pub(crate) const OVERLAP_CACHE: &str = "overlap_cache.jsonl";
pub(crate) const MIRRORS: &str = "mirrors.json";
pub(crate) const MARGIN: &str = "margin.json";
pub(crate) const HOST_PROFILES: &str = "host_profiles.jsonl";
pub(crate) const EMAIL_CENSUS: &str = "email_census.json";
pub(crate) const STATS: &str = "stats.json";
pub(crate) const EXPORTS: &str = "exports";
pub(crate) const REPORTS: &str = "reports";

trait OrStage<T> {
    fn or_stage(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Display> OrStage<T> for Result<T, E> {
    fn or_stage(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::Stage {
            stage,
            message: e.to_string(),
        })
    }
}

pub(super) fn run(p: &Pipeline, stage: Stage) -> Result<Value, PipelineError> {
    match stage {
        Stage::Scan => scan(p),
        Stage::Probe => probe(p),
        Stage::Crawl => crawl(p),
        Stage::Clone => clone(p),
        Stage::Extract => extract(p),
        Stage::Metrics => metrics(p),
        Stage::Dedup => dedup(p),
        Stage::Label => label(p),
        Stage::Stats => stats(p),
        Stage::Report => emit_report(p),
    }
}

fn path(p: &Pipeline, rel: &str) -> PathBuf {
    p.store.path(rel)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n")
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn rules(p: &Pipeline, stage: Stage) -> Result<RuleSet, PipelineError> {
    match &p.config.scan.rules {
        Some(path) => RuleSet::load(path).or_stage(stage),
        None => Ok(RuleSet::builtin()),
    }
}

fn env_secret(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

fn count_by<I: IntoIterator<Item = String>>(items: I) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for k in items {
        *m.entry(k).or_insert(0) += 1;
    }
    m
}

fn scan(p: &Pipeline) -> Result<Value, PipelineError> {
    let cfg = &p.config.scan;
    let rules = rules(p, Stage::Scan)?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for list in &cfg.host_lists {
        let import = ingest_host_list(list).or_stage(Stage::Scan)?;
        let source = list.display().to_string();
        records.extend(import.records);
        skipped.extend(import.skipped.into_iter().map(|s| {
            json!({"source": source, "line": s.line, "content": s.content, "reason": s.reason})
        }));
    }
    let from_lists = records.len();
    let mut warnings: Vec<ScanWarning> = Vec::new();
    let mut from_api = 0;
    if let Some(base) = &cfg.api_base {
        match env_secret(&cfg.api_key_env) {
            Some(key) => {
                let client = ShodanClient::new(p.fetcher.clone(), base, &key);
                let result = query_scan_api(&client, &rules, cfg.page_cap).or_stage(Stage::Scan)?;
                from_api = result.records.len();
                records.extend(result.records);
                warnings.extend(result.warnings);
            }
            None => warnings.push(ScanWarning {
                marker: String::new(),
                message: format!("{} is not set; scan API not queried", cfg.api_key_env),
            }),
        }
    }
    let hosts = dedup_hosts(records);
    jsonl::write_all(&path(p, HOSTS), &hosts).or_stage(Stage::Scan)?;
    jsonl::write_all(&path(p, SCAN_SKIPPED), &skipped).or_stage(Stage::Scan)?;
    jsonl::write_all(&path(p, SCAN_WARNINGS), &warnings).or_stage(Stage::Scan)?;
    Ok(json!({
        "hosts": hosts.len(),
        "from_host_lists": from_lists,
        "from_scan_api": from_api,
        "skipped_lines": skipped.len(),
        "warnings": warnings.len(),
    }))
}

fn probe(p: &Pipeline) -> Result<Value, PipelineError> {
    let rules = rules(p, Stage::Probe)?;
    let hosts: Vec<HostRecord> = jsonl::read_all(&path(p, HOSTS)).or_stage(Stage::Probe)?;
    let probed = probe_hosts(&hosts, &*p.fetcher, &rules, p.config.probe.concurrency);
    jsonl::write_all(&path(p, PROBED), &probed).or_stage(Stage::Probe)?;
    Ok(json!({
        "hosts": probed.len(),
        "kinds": count_by(probed.iter().map(|h| h.kind.as_str().to_string())),
        "unreachable": probed.iter().filter(|h| h.annotation.as_deref().is_some_and(|a| a.starts_with("unreachable"))).count(),
    }))
}

fn crawl(p: &Pipeline) -> Result<Value, PipelineError> {
    let mut hosts: Vec<HostRecord> = jsonl::read_all(&path(p, PROBED)).or_stage(Stage::Crawl)?;
    if let Some(filter) = &p.host_filter {
        let wanted: HashSet<(String, u16)> = ingest_host_list(filter)
            .or_stage(Stage::Crawl)?
            .records
            .into_iter()
            .map(|r| (r.address, r.port))
            .collect();
        hosts.retain(|h| wanted.contains(&(h.address.clone(), h.port)));
    }
    let store = CrawlStore::open(&path(p, CRAWL)).or_stage(Stage::Crawl)?;
    let summary = crawl_corpus(&hosts, &*p.fetcher, &p.config.crawl.limits(), &store, p.force).or_stage(Stage::Crawl)?;
    Ok(serde_json::to_value(summary).expect("serializable"))
}

/// Repositories listed on probed forge hosts, in host order.
fn reference_refs(p: &Pipeline, stage: Stage) -> Result<Vec<RepoRef>, PipelineError> {
    let hosts: Vec<HostRecord> = jsonl::read_all(&path(p, PROBED)).or_stage(stage)?;
    let state = load_crawl_state(&path(p, CRAWL)).or_stage(stage)?;
    let mut keys: Vec<HostKey> = hosts.iter().filter(|h| h.kind.is_forge()).map(HostRecord::key).collect();
    keys.sort();
    keys.dedup();
    Ok(keys
        .iter()
        .filter_map(|k| state.get(k))
        .filter(|s| matches!(s.status, HostCrawlStatus::Listed { .. }))
        .flat_map(|s| s.repos.iter().cloned())
        .collect())
}

fn clone_dest(p: &Pipeline) -> PathBuf {
    p.config.clone.dest.clone().unwrap_or_else(|| p.store.path("repos"))
}

fn clone(p: &Pipeline) -> Result<Value, PipelineError> {
    let refs = reference_refs(p, Stage::Clone)?;
    let log = CloneLog::open(&path(p, CLONES)).or_stage(Stage::Clone)?;
    let summary = clone_corpus(&refs, &clone_dest(p), &p.config.clone.limits(), &*p.fetcher, &log).or_stage(Stage::Clone)?;
    Ok(json!({"repositories": refs.len(), "outcomes": summary.outcomes, "attempts_this_run": summary.attempts_this_run}))
}

pub(crate) fn repo_file_name(repo_id: &str) -> String {
    format!("{}.jsonl", utf8_percent_encode(repo_id, NON_ALPHANUMERIC))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct LanguageRecord {
    pub repo_id: String,
    pub tally: LanguageTally,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ExtractFailure {
    corpus: String,
    repo_id: String,
    reason: String,
}

struct CorpusExtraction {
    first_commits: Vec<DateTime<Utc>>,
    extracted: usize,
    failed: usize,
}

/// Successfully cloned repositories and their local paths.
fn cloned(refs: &[RepoRef], log: &Path, stage: Stage) -> Result<Vec<(String, PathBuf)>, PipelineError> {
    let state = load_clone_state(log).or_stage(stage)?;
    Ok(refs
        .iter()
        .filter_map(|r| {
            let id = r.repo_id();
            match state.get(&id).map(|s| &s.latest) {
                Some(CloneOutcome::Success { local_path }) => Some((id, local_path.clone())),
                _ => None,
            }
        })
        .collect())
}

fn extract_corpus(
    p: &Pipeline,
    corpus: &str,
    targets: &[(String, PathBuf)],
    failures: &mut Vec<ExtractFailure>,
) -> Result<CorpusExtraction, PipelineError> {
    let dir = p.store.dir(&format!("{EXTRACT}/{corpus}"))?;
    let results: Vec<Result<(DateTime<Utc>, LanguageRecord), ExtractFailure>> = targets
        .par_iter()
        .map(|(id, local)| {
            let fail = |reason: String| ExtractFailure {
                corpus: corpus.to_string(),
                repo_id: id.clone(),
                reason,
            };
            let repo = GitRepo::open(local);
            let ex = extract_repository(&repo, id).map_err(|e| fail(e.to_string()))?;
            let tally = tally_languages(&repo, &ex.head).map_err(|e| fail(e.to_string()))?;
            let first = ex.history.first().expect("non-empty history").author_time;
            let mut records: Vec<ExtractRecord> = ex.history.into_iter().map(ExtractRecord::Commit).collect();
            records.push(ExtractRecord::Snapshot(ex.snapshot));
            jsonl::write_all(&dir.join(repo_file_name(id)), &records).map_err(|e| fail(e.to_string()))?;
            Ok((
                first,
                LanguageRecord {
                    repo_id: id.clone(),
                    tally,
                },
            ))
        })
        .collect();
    let mut languages = Vec::new();
    let mut first_commits = Vec::new();
    let mut failed = 0;
    for r in results {
        match r {
            Ok((first, lang)) => {
                first_commits.push(first);
                languages.push(lang);
            }
            Err(f) => {
                log::warn!("{}: extraction failed: {}", f.repo_id, f.reason);
                failed += 1;
                failures.push(f);
            }
        }
    }
    languages.sort_by(|a, b| a.repo_id.cmp(&b.repo_id));
    jsonl::write_all(&dir.join(LANGUAGES), &languages).or_stage(Stage::Extract)?;
    Ok(CorpusExtraction {
        first_commits,
        extracted: languages.len(),
        failed,
    })
}

fn extract(p: &Pipeline) -> Result<Value, PipelineError> {
    let root = path(p, EXTRACT);
    if root.exists() {
        fs::remove_dir_all(&root).or_stage(Stage::Extract)?;
    }
    p.store.dir(EXTRACT)?;
    let mut failures = Vec::new();
    let refs = reference_refs(p, Stage::Extract)?;
    let targets = cloned(&refs, &path(p, CLONES), Stage::Extract)?;
    let reference = extract_corpus(p, REFERENCE_CORPUS, &targets, &mut failures)?;
    let mut summary = json!({
        REFERENCE_CORPUS: {"cloned": targets.len(), "extracted": reference.extracted, "failed": reference.failed},
    });

    let cmp = &p.config.comparison;
    if let Some(events) = &cmp.events {
        let mut months = BTreeMap::new();
        for t in &reference.first_commits {
            *months.entry(month_of(*t)).or_insert(0u64) += 1;
        }
        let plan = build_comparison_plan(&months, cmp.oversample_factor);
        let platform = parse_host_entry(&cmp.base_url).or_stage(Stage::Extract)?;
        let sample = ingest_comparison_corpus(events, &plan, &platform, p.config.seed).or_stage(Stage::Extract)?;
        for s in &sample.shortfalls {
            log::warn!("comparison month {}: {} events for a target of {}", s.month, s.available, s.target);
        }
        write_json(
            &root.join("comparison_plan.json"),
            &json!({
                "plan": plan,
                "sampled": sample.refs.len(),
                "shortfalls": sample.shortfalls,
                "skipped_event_lines": sample.skipped_lines,
            }),
        )
        .or_stage(Stage::Extract)?;
        jsonl::write_all(&root.join("comparison_refs.jsonl"), &sample.refs).or_stage(Stage::Extract)?;
        let log = CloneLog::open(&path(p, COMPARISON_CLONES)).or_stage(Stage::Extract)?;
        let cloning = clone_corpus(&sample.refs, &clone_dest(p), &p.config.clone.limits(), &*p.fetcher, &log)
            .or_stage(Stage::Extract)?;
        let targets = cloned(&sample.refs, &path(p, COMPARISON_CLONES), Stage::Extract)?;
        let comparison = extract_corpus(p, &cmp.corpus, &targets, &mut failures)?;
        summary[cmp.corpus.as_str()] = json!({
            "planned": plan.planned_size(),
            "sampled": sample.refs.len(),
            "shortfall_months": sample.shortfalls.len(),
            "clone_outcomes": cloning.outcomes,
            "extracted": comparison.extracted,
            "failed": comparison.failed,
        });
    }
    failures.sort_by(|a, b| (&a.corpus, &a.repo_id).cmp(&(&b.corpus, &b.repo_id)));
    jsonl::write_all(&root.join("failures.jsonl"), &failures).or_stage(Stage::Extract)?;
    Ok(summary)
}

/// Corpora with an extraction directory, sorted.
fn corpora(p: &Pipeline, stage: Stage) -> Result<Vec<String>, PipelineError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(path(p, EXTRACT)).or_stage(stage)? {
        let entry = entry.or_stage(stage)?;
        if entry.file_type().or_stage(stage)?.is_dir() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

/// Apply `f` to every extracted repository of `corpus`, in repository-id order.
fn read_corpus<T: Send>(
    p: &Pipeline,
    corpus: &str,
    stage: Stage,
    f: impl Fn(Vec<CommitMeta>, RepoSnapshot) -> T + Sync,
) -> Result<Vec<T>, PipelineError> {
    let dir = path(p, &format!("{EXTRACT}/{corpus}"));
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let languages: Vec<LanguageRecord> = jsonl::read_all(&dir.join(LANGUAGES)).or_stage(stage)?;
    languages
        .par_iter()
        .map(|l| {
            let file = dir.join(repo_file_name(&l.repo_id));
            let records: Vec<ExtractRecord> = jsonl::read_all(&file).or_stage(stage)?;
            let (history, snapshot) = split_records(records);
            let snapshot = snapshot
                .ok_or_else(|| format!("{}: no snapshot record", file.display()))
                .or_stage(stage)?;
            Ok(f(history, snapshot))
        })
        .collect()
}

fn metrics(p: &Pipeline) -> Result<Value, PipelineError> {
    let mut rows = Vec::new();
    let mut per_corpus = BTreeMap::new();
    for corpus in corpora(p, Stage::Metrics)? {
        let dir = path(p, &format!("{EXTRACT}/{corpus}"));
        let tallies: HashMap<String, LanguageTally> = jsonl::read_all::<LanguageRecord>(&dir.join(LANGUAGES))
            .or_stage(Stage::Metrics)?
            .into_iter()
            .map(|l| (l.repo_id, l.tally))
            .collect();
        let computed = read_corpus(p, &corpus, Stage::Metrics, |history, snapshot| {
            compute_repo_metrics(&history, &snapshot, &tallies[&snapshot.repo_id])
        })?;
        let mut n = 0;
        for m in computed {
            let m = m.or_stage(Stage::Metrics)?;
            rows.push(CorpusMetrics {
                corpus: corpus.clone(),
                metrics: m,
            });
            n += 1;
        }
        per_corpus.insert(corpus, n);
    }
    rows.sort_by(|a, b| (&a.corpus, &a.metrics.repo_id).cmp(&(&b.corpus, &b.metrics.repo_id)));
    jsonl::write_all(&path(p, METRICS), &rows).or_stage(Stage::Metrics)?;
    let exports = p.store.dir(EXPORTS)?;
    write_metrics_csv_file(&exports.join("metrics.csv"), &rows).or_stage(Stage::Metrics)?;
    Ok(json!({"repositories": per_corpus}))
}

fn reference_snapshots(p: &Pipeline, stage: Stage) -> Result<Vec<RepoSnapshot>, PipelineError> {
    let mut snaps = read_corpus(p, REFERENCE_CORPUS, stage, |_, s| s)?;
    snaps.sort_by(|a, b| a.repo_id.cmp(&b.repo_id));
    Ok(snaps)
}

fn dedup(p: &Pipeline) -> Result<Value, PipelineError> {
    let cfg = &p.config.dedup;
    let snaps = reference_snapshots(p, Stage::Dedup)?;
    let cache = HashCache::open(&path(p, OVERLAP_CACHE)).or_stage(Stage::Dedup)?;
    let mut reports: Vec<OverlapReport> = Vec::new();
    let mut pending = Vec::new();
    if cfg.github {
        let fetcher = PoliteFetcher::with_rate(p.fetcher.clone(), cfg.rate);
        let client = GithubCommitSearch::new(fetcher, &cfg.github_base, env_secret(&cfg.github_token_env));
        let batch = check_corpus(&snaps, &client, &cache, cfg.retry_policy());
        reports.extend(batch.reports);
        pending.extend(batch.pending);
    }
    if cfg.software_heritage {
        let fetcher = PoliteFetcher::with_rate(p.fetcher.clone(), cfg.rate);
        let client = SoftwareHeritage::new(fetcher, &cfg.software_heritage_base, env_secret(&cfg.software_heritage_token_env));
        let batch = check_corpus(&snaps, &client, &cache, cfg.retry_policy());
        reports.extend(batch.reports);
        pending.extend(batch.pending);
    }
    reports.extend(intra_corpus_reports(&snaps, Utc::now()));
    let mirrors = intra_corpus_mirrors(&snaps);
    let margin: MarginSplit = margin_filter(&snaps, &reports);
    jsonl::write_all(&path(p, OVERLAP), &reports).or_stage(Stage::Dedup)?;
    jsonl::write_all(&path(p, OVERLAP_PENDING), &pending).or_stage(Stage::Dedup)?;
    write_json(&path(p, MIRRORS), &mirrors).or_stage(Stage::Dedup)?;
    write_json(&path(p, MARGIN), &margin).or_stage(Stage::Dedup)?;
    let classes = count_by(reports.iter().map(|r| format!("{}/{}", r.target.as_str(), r.class.as_str())));
    Ok(json!({
        "repositories": snaps.len(),
        "classes": classes,
        "pending": pending.len(),
        "eligible": margin.eligible.len(),
        "excluded": margin.excluded.len(),
        "unresolved": margin.pending.len(),
    }))
}

pub(crate) fn domain_list(p: &Pipeline, stage: Stage) -> Result<DomainList, PipelineError> {
    match &p.config.label.university_domains {
        Some(path) => DomainList::load(path).or_stage(stage),
        None => DomainList::parse(SAMPLE_UNIVERSITY_DOMAINS).or_stage(stage),
    }
}

fn label(p: &Pipeline) -> Result<Value, PipelineError> {
    let cfg = &p.config.label;
    let list = domain_list(p, Stage::Label)?;
    let deny: HashSet<String> = cfg.extra_denylist.iter().map(|e| e.trim().to_lowercase()).collect();
    let geo = match &cfg.geo_locations {
        Some(locations) => {
            let blocks: Vec<&Path> = cfg.geo_blocks.iter().map(PathBuf::as_path).collect();
            Some(CsvGeoDatabase::load(&blocks, locations).or_stage(Stage::Label)?)
        }
        None => None,
    };

    let refs = reference_refs(p, Stage::Label)?;
    let host_of: HashMap<String, HostKey> = refs.iter().map(|r| (r.repo_id(), r.host.clone())).collect();
    let mut repos_per_host: BTreeMap<HostKey, u64> = BTreeMap::new();
    for r in &refs {
        *repos_per_host.entry(r.host.clone()).or_default() += 1;
    }
    // listed hosts without any repository still count as hosts
    let state = load_crawl_state(&path(p, CRAWL)).or_stage(Stage::Label)?;
    let probed: Vec<HostRecord> = jsonl::read_all(&path(p, PROBED)).or_stage(Stage::Label)?;
    for h in probed.iter().filter(|h| h.kind.is_forge()) {
        if state
            .get(&h.key())
            .is_some_and(|s| matches!(s.status, HostCrawlStatus::Listed { .. }))
        {
            repos_per_host.entry(h.key()).or_default();
        }
    }

    let per_repo = read_corpus(p, REFERENCE_CORPUS, Stage::Label, |history, snapshot| {
        (snapshot.repo_id, unique_emails(&history))
    })?;
    let mut emails: BTreeMap<&HostKey, BTreeSet<String>> = BTreeMap::new();
    for (id, set) in &per_repo {
        if let Some(host) = host_of.get(id) {
            emails.entry(host).or_default().extend(set.iter().cloned());
        }
    }
    let empty = BTreeSet::new();
    let profiles: Vec<HostProfile> = repos_per_host
        .iter()
        .map(|(host, count)| {
            let raw = emails.get(host).unwrap_or(&empty);
            let filtered = filter_fake_emails(raw.iter().map(String::as_str), &deny);
            let labelled = label_host(&filtered, &list, cfg.academic_threshold);
            let location = geo.as_ref().and_then(|g| geolocate(host, g, &*p.resolver));
            HostProfile::new(host.clone(), labelled, location, *count)
        })
        .collect();
    let census = cross_host_emails(&profiles);
    jsonl::write_all(&path(p, HOST_PROFILES), &profiles).or_stage(Stage::Label)?;
    write_json(&path(p, EMAIL_CENSUS), &census).or_stage(Stage::Label)?;
    Ok(json!({
        "hosts": profiles.len(),
        "academic_hosts": profiles.iter().filter(|h| h.is_academic).count(),
        "located_hosts": profiles.iter().filter(|h| h.region.is_some()).count(),
        "distinct_emails": census.distinct_emails,
    }))
}

fn stats(p: &Pipeline) -> Result<Value, PipelineError> {
    let rows: Vec<CorpusMetrics> = jsonl::read_all(&path(p, METRICS)).or_stage(Stage::Stats)?;
    let margin: MarginSplit = read_json(&path(p, MARGIN)).or_stage(Stage::Stats)?;
    let comparison = p.config.comparison.corpus.as_str();
    let analysis = report::analysis_rows(rows, &margin, comparison);
    let exports = p.store.dir(EXPORTS)?;
    write_metrics_csv_file(&exports.join("analysis.csv"), &analysis).or_stage(Stage::Stats)?;
    let output = report::analyze(&analysis, REFERENCE_CORPUS, comparison, &p.config.stats);
    write_json(&path(p, STATS), &output).or_stage(Stage::Stats)?;
    Ok(json!({
        "reference_rows": output.reference_rows,
        "comparison_rows": output.comparison_rows,
        "models": output.models.iter().map(|m| json!({"name": m.name, "fitted": m.fit.is_some()})).collect::<Vec<_>>(),
    }))
}

fn emit_report(p: &Pipeline) -> Result<Value, PipelineError> {
    let list = domain_list(p, Stage::Report)?;
    let inputs = report::ReportInputs::load(p.store.root(), &p.config, &list).or_stage(Stage::Report)?;
    let written = report::emit(p.store.root(), &inputs).or_stage(Stage::Report)?;
    Ok(json!({"files": written}))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repo_file_names_are_flat_and_distinct() {
        let a = repo_file_name("git.example.org:443/group/sub/tool");
        let b = repo_file_name("git.example.org:443/group/sub%2Ftool");
        assert!(!a.contains('/') && !b.contains('/'));
        assert_ne!(a, b);
        assert!(a.ends_with(".jsonl"));
    }
}
