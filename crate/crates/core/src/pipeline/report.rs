//! Comparison, geography, overlap and regression reports.
//!
//! Every report is written as JSON and as an aligned text table. Reports
//! carry counts and aggregates only (no repository ids, addresses or
//! timestamps) so that identical inputs give byte-identical files.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Config, StatsConfig};
use super::stages::{
    read_json, write_json, EMAIL_CENSUS, EXPORTS, HOST_PROFILES, MARGIN, METRICS, MIRRORS, OVERLAP, OVERLAP_PENDING,
    REPORTS, STATS,
};
use super::REFERENCE_CORPUS;
use crate::dedup::{MarginSplit, MirrorCensus, OverlapClass, OverlapReport, OverlapTarget, PendingCheck};
use crate::jsonl;
use crate::label::{is_academic_email, DomainList, EmailCensus, HostProfile};
use crate::metrics::{CorpusMetrics, RepoMetrics};
use crate::stats::design::{BASELINE_LANGUAGE, LANGUAGE_PREFIX};
use crate::stats::logistic::INTERCEPT;
use crate::stats::{
    build_design_matrix, ks_two_sample, logistic_fit, summarize, DeletionCensus, DesignOptions, FitOptions, KsResult,
    LogisticFitResult, SummaryStats,
};

/// One per-repository statistic compared between corpora.
pub struct Statistic {
    pub label: &'static str,
    pub key: &'static str,
    pub value: fn(&RepoMetrics) -> Option<f64>,
}

/// Rows of the comparison table, in display order.
pub const TABLE_STATISTICS: [Statistic; 11] = [
    Statistic {
        label: "Files",
        key: "files",
        value: |m| Some(m.files as f64),
    },
    Statistic {
        label: "Committers",
        key: "committers",
        value: |m| Some(m.committers as f64),
    },
    Statistic {
        label: "Message Lengths",
        key: "avg_message_length",
        value: |m| Some(m.avg_message_length),
    },
    Statistic {
        label: "Editor Density",
        key: "avg_editors_per_file",
        value: |m| m.avg_editors_per_file,
    },
    Statistic {
        label: "Burstiness",
        key: "burstiness",
        value: |m| Some(m.burstiness),
    },
    Statistic {
        label: "Commits",
        key: "commits",
        value: |m| Some(m.commits as f64),
    },
    Statistic {
        label: "Branches",
        key: "branches",
        value: |m| Some(m.branches as f64),
    },
    Statistic {
        label: "Age (hours)",
        key: "age_hours",
        value: |m| Some(m.age_hours),
    },
    Statistic {
        label: "Age / Commits",
        key: "age_per_commit",
        value: |m| Some(m.age_hours / m.commits as f64),
    },
    Statistic {
        label: "Avg. Interevent",
        key: "mean_interevent_hours",
        value: |m| m.mean_interevent_hours,
    },
    Statistic {
        label: "Team Size",
        key: "effective_team_size",
        value: |m| Some(m.effective_team_size),
    },
];

/// Exported as distributions in addition to the table rows.
pub const EXTRA_DISTRIBUTIONS: [Statistic; 1] = [Statistic {
    label: "Lead Workload",
    key: "lead_workload",
    value: |m| Some(m.lead_workload),
}];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticRow {
    pub statistic: String,
    pub key: String,
    pub reference: Option<SummaryStats>,
    pub comparison: Option<SummaryStats>,
    pub ks: Option<KsResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub name: String,
    pub include_language: bool,
    pub census: Option<DeletionCensus>,
    pub fit: Option<LogisticFitResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsOutput {
    pub reference_corpus: String,
    pub comparison_corpus: String,
    pub reference_rows: usize,
    pub comparison_rows: usize,
    pub table: Vec<StatisticRow>,
    pub models: Vec<ModelResult>,
}

/// Analysis rows: reference repositories that passed the overlap filter,
/// plus every comparison repository.
pub fn analysis_rows(rows: Vec<CorpusMetrics>, margin: &MarginSplit, comparison: &str) -> Vec<CorpusMetrics> {
    let eligible: HashSet<&str> = margin.eligible.iter().map(String::as_str).collect();
    rows.into_iter()
        .filter(|r| {
            (r.corpus == REFERENCE_CORPUS && eligible.contains(r.metrics.repo_id.as_str())) || r.corpus == comparison
        })
        .collect()
}

fn values(rows: &[&RepoMetrics], stat: &Statistic) -> Vec<f64> {
    rows.iter().filter_map(|m| (stat.value)(m)).collect()
}

/// Summary statistics and KS tests per statistic, then both regression models.
pub fn analyze(rows: &[CorpusMetrics], reference: &str, comparison: &str, cfg: &StatsConfig) -> StatsOutput {
    let pick = |c: &str| -> Vec<&RepoMetrics> { rows.iter().filter(|r| r.corpus == c).map(|r| &r.metrics).collect() };
    let a = pick(reference);
    let b = pick(comparison);
    let table = TABLE_STATISTICS
        .iter()
        .map(|s| {
            let va = values(&a, s);
            let vb = values(&b, s);
            StatisticRow {
                statistic: s.label.to_string(),
                key: s.key.to_string(),
                reference: summarize(&va).ok(),
                comparison: summarize(&vb).ok(),
                ks: ks_two_sample(&va, &vb).ok(),
            }
        })
        .collect();
    let models = [("Model 1", true), ("Model 2", false)]
        .into_iter()
        .map(|(name, include_language)| {
            let opts = DesignOptions {
                positive_corpus: reference.to_string(),
                include_language,
                rare_language_threshold: cfg.rare_language_threshold,
            };
            let mut result = ModelResult {
                name: name.to_string(),
                include_language,
                census: None,
                fit: None,
                error: None,
            };
            match build_design_matrix(rows, &opts) {
                Ok(design) => {
                    result.census = Some(design.census.clone());
                    match logistic_fit(
                        &design,
                        FitOptions {
                            tol: cfg.tol,
                            max_iter: cfg.max_iter,
                        },
                    ) {
                        Ok(fit) => result.fit = Some(fit),
                        Err(e) => result.error = Some(e.to_string()),
                    }
                }
                Err(e) => result.error = Some(e.to_string()),
            }
            result
        })
        .collect();
    StatsOutput {
        reference_corpus: reference.to_string(),
        comparison_corpus: comparison.to_string(),
        reference_rows: a.len(),
        comparison_rows: b.len(),
        table,
        models,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub population: f64,
    pub gh_user_percent: Option<f64>,
}

/// Operator-supplied `region,population[,gh_user_percent]` lines. A header
/// line and `#` comments are allowed.
pub fn parse_populations(text: &str) -> Result<BTreeMap<String, Population>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let region = rec.get(0).unwrap_or_default().to_string();
        let Ok(population) = rec.get(1).unwrap_or_default().parse::<f64>() else {
            if i == 0 {
                continue;
            }
            return Err(format!("record {}: population is not a number", i + 1));
        };
        let gh_user_percent = match rec.get(2).filter(|s| !s.is_empty()) {
            Some(s) => Some(s.parse::<f64>().map_err(|_| format!("record {}: bad GitHub user share", i + 1))?),
            None => None,
        };
        out.insert(
            region,
            Population {
                population,
                gh_user_percent,
            },
        );
    }
    Ok(out)
}

pub const UNKNOWN_REGION: &str = "unknown";
const REGION_ORDER: [&str; 6] = ["EU", "NA", "AS", "SA", "OC", "AF"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoRow {
    pub region: String,
    pub hosts: usize,
    pub host_percent: f64,
    pub users: usize,
    pub user_percent: f64,
    pub gh_user_percent: Option<f64>,
    pub repositories: u64,
    pub repositories_per_capita: Option<f64>,
    pub academic_emails: usize,
    pub academic_percent: f64,
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

fn region_rank(r: &str) -> (usize, &str) {
    match REGION_ORDER.iter().position(|x| *x == r) {
        Some(i) => (i, ""),
        None if r == UNKNOWN_REGION => (REGION_ORDER.len() + 1, r),
        None => (REGION_ORDER.len(), r),
    }
}

/// One row per region present. An address seen on hosts in several regions
/// counts as a user of each.
pub fn geography_rows(
    profiles: &[HostProfile],
    list: &DomainList,
    populations: &BTreeMap<String, Population>,
) -> Vec<GeoRow> {
    let all_emails: BTreeSet<&str> = profiles
        .iter()
        .flat_map(|p| p.unique_emails.iter().map(String::as_str))
        .collect();
    let mut by_region: BTreeMap<&str, Vec<&HostProfile>> = BTreeMap::new();
    for p in profiles {
        by_region
            .entry(p.region.as_deref().unwrap_or(UNKNOWN_REGION))
            .or_default()
            .push(p);
    }
    let mut regions: Vec<&str> = by_region.keys().copied().collect();
    regions.sort_by_key(|r| region_rank(r));
    regions
        .into_iter()
        .map(|region| {
            let hosts = &by_region[region];
            let emails: BTreeSet<&str> = hosts
                .iter()
                .flat_map(|p| p.unique_emails.iter().map(String::as_str))
                .collect();
            let academic = emails.iter().filter(|e| is_academic_email(e, list)).count();
            let repositories: u64 = hosts.iter().map(|p| p.repo_count).sum();
            let pop = populations.get(region);
            GeoRow {
                region: region.to_string(),
                hosts: hosts.len(),
                host_percent: percent(hosts.len(), profiles.len()),
                users: emails.len(),
                user_percent: percent(emails.len(), all_emails.len()),
                gh_user_percent: pop.and_then(|p| p.gh_user_percent),
                repositories,
                repositories_per_capita: pop.filter(|p| p.population > 0.0).map(|p| repositories as f64 / p.population),
                academic_emails: academic,
                academic_percent: percent(academic, emails.len()),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetCensus {
    pub target: OverlapTarget,
    pub novel: usize,
    pub duplicate_complete: usize,
    pub diverged: usize,
    pub pending: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MirrorSummary {
    pub repositories: usize,
    pub groups: usize,
    pub largest_group: usize,
    pub grouped_repositories: usize,
    pub mirror_repositories: usize,
    pub diverged_repositories: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmailSummary {
    pub distinct: usize,
    pub multi_host: usize,
    pub multi_country: usize,
    pub multi_continent: usize,
    pub hosts_per_email: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapCensus {
    pub targets: Vec<TargetCensus>,
    pub mirrors: MirrorSummary,
    pub eligible: usize,
    pub excluded: usize,
    pub unresolved: usize,
    pub emails: EmailSummary,
}

pub fn overlap_census(
    reports: &[OverlapReport],
    pending: &[PendingCheck],
    mirrors: &MirrorCensus,
    margin: &MarginSplit,
    emails: &EmailCensus,
) -> OverlapCensus {
    let targets = [OverlapTarget::Github, OverlapTarget::SoftwareHeritage, OverlapTarget::IntraCorpus]
        .into_iter()
        .filter(|t| reports.iter().any(|r| r.target == *t) || pending.iter().any(|p| p.target == *t))
        .map(|t| {
            let count = |c: OverlapClass| reports.iter().filter(|r| r.target == t && r.class == c).count();
            TargetCensus {
                target: t,
                novel: count(OverlapClass::Novel),
                duplicate_complete: count(OverlapClass::DuplicateComplete),
                diverged: count(OverlapClass::Diverged),
                pending: pending.iter().filter(|p| p.target == t).count(),
            }
        })
        .collect();
    OverlapCensus {
        targets,
        mirrors: MirrorSummary {
            repositories: mirrors.repositories,
            groups: mirrors.groups.len(),
            largest_group: mirrors.groups.iter().map(|g| g.size()).max().unwrap_or(0),
            grouped_repositories: mirrors.grouped_repositories,
            mirror_repositories: mirrors.mirror_repositories,
            diverged_repositories: mirrors.diverged_repositories,
        },
        eligible: margin.eligible.len(),
        excluded: margin.excluded.len(),
        unresolved: margin.pending.len(),
        emails: EmailSummary {
            distinct: emails.distinct_emails,
            multi_host: emails.multi_host.len(),
            multi_country: emails.multi_country.len(),
            multi_continent: emails.multi_continent.len(),
            hosts_per_email: emails.hosts_per_email.clone(),
        },
    }
}

/// Everything the report stage reads from the store.
pub struct ReportInputs {
    pub stats: StatsOutput,
    pub geography: Vec<GeoRow>,
    pub overlap: OverlapCensus,
    pub analysis: Vec<CorpusMetrics>,
}

impl ReportInputs {
    pub fn load(root: &Path, config: &Config, list: &DomainList) -> Result<Self, String> {
        let stats: StatsOutput = read_json(&root.join(STATS))?;
        let profiles: Vec<HostProfile> = jsonl::read_all(&root.join(HOST_PROFILES)).map_err(|e| e.to_string())?;
        let census: EmailCensus = read_json(&root.join(EMAIL_CENSUS))?;
        let reports: Vec<OverlapReport> = jsonl::read_all(&root.join(OVERLAP)).map_err(|e| e.to_string())?;
        let pending: Vec<PendingCheck> = jsonl::read_all(&root.join(OVERLAP_PENDING)).map_err(|e| e.to_string())?;
        let mirrors: MirrorCensus = read_json(&root.join(MIRRORS))?;
        let margin: MarginSplit = read_json(&root.join(MARGIN))?;
        let rows: Vec<CorpusMetrics> = jsonl::read_all(&root.join(METRICS)).map_err(|e| e.to_string())?;
        let populations = match &config.label.populations {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                parse_populations(&text).map_err(|e| format!("{}: {e}", p.display()))?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            geography: geography_rows(&profiles, list, &populations),
            overlap: overlap_census(&reports, &pending, &mirrors, &margin, &census),
            analysis: analysis_rows(rows, &margin, &stats.comparison_corpus),
            stats,
        })
    }
}

/// Pad columns to a common width; the first column is left-aligned.
pub fn render_table(headers: &[String], rows: &[Vec<String>]) -> String {
    let n = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate().take(n) {
            widths[i] = widths[i].max(c.chars().count());
        }
    }
    let line = |cells: &[String]| -> String {
        let mut s = String::new();
        for (i, w) in widths.iter().enumerate() {
            let c = cells.get(i).map(String::as_str).unwrap_or("");
            if i > 0 {
                s.push_str("  ");
            }
            if i == 0 {
                s.push_str(&format!("{c:<w$}"));
            } else {
                s.push_str(&format!("{c:>w$}"));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(headers);
    out.push_str(&(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  ") + "\n"));
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

fn num(x: f64) -> String {
    format!("{x:.2}")
}

pub fn format_p(p: f64) -> String {
    if p < 0.001 {
        "< 0.001".into()
    } else {
        format!("{p:.3}")
    }
}

pub fn comparison_text(stats: &StatsOutput) -> String {
    let (a, b) = (&stats.reference_corpus, &stats.comparison_corpus);
    let mut out = format!(
        "Comparison of {a} and {b} repositories\n{a}: {} repositories; {b}: {} repositories\nCI is the 5th to 95th percentile range.\n",
        stats.reference_rows, stats.comparison_rows
    );
    if stats.reference_rows == 0 {
        out.push_str(&format!(
            "NOTICE: no {a} repositories are eligible after the overlap filter; the {a} columns have zero rows.\n"
        ));
    }
    if stats.comparison_rows == 0 {
        out.push_str(&format!("NOTICE: the {b} corpus has zero rows.\n"));
    }
    out.push('\n');
    let headers: Vec<String> = [
        "Statistic".to_string(),
        format!("{a} mean"),
        format!("{a} median"),
        format!("{a} CI"),
        format!("{b} mean"),
        format!("{b} median"),
        format!("{b} CI"),
        "KS S".into(),
        "KS P".into(),
    ]
    .into();
    let cells = |s: &Option<SummaryStats>| -> [String; 3] {
        match s {
            Some(s) => [num(s.mean), num(s.median), format!("[{},{}]", num(s.p5), num(s.p95))],
            None => ["n/a".into(), "n/a".into(), "n/a".into()],
        }
    };
    let rows: Vec<Vec<String>> = stats
        .table
        .iter()
        .map(|r| {
            let mut row = vec![r.statistic.clone()];
            row.extend(cells(&r.reference));
            row.extend(cells(&r.comparison));
            match &r.ks {
                Some(ks) => {
                    row.push(num(ks.statistic));
                    row.push(format_p(ks.p_value));
                }
                None => row.extend(["n/a".to_string(), "n/a".to_string()]),
            }
            row
        })
        .collect();
    out + &render_table(&headers, &rows)
}

pub fn geography_text(rows: &[GeoRow], emails: &EmailSummary) -> String {
    let headers: Vec<String> = [
        "Region",
        "% Hosts",
        "% PN users",
        "% GH users",
        "PN repositories",
        "Per capita",
        "% Academic emails",
    ]
    .map(String::from)
    .into();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.region.clone(),
                num(r.host_percent),
                num(r.user_percent),
                r.gh_user_percent.map_or("n/a".into(), num),
                r.repositories.to_string(),
                r.repositories_per_capita.map_or("n/a".into(), |x| format!("{x:.2e}")),
                num(r.academic_percent),
            ]
        })
        .collect();
    let mut out = String::from("Geographic split of hosts, users and repositories\n");
    if rows.is_empty() {
        out.push_str("NOTICE: no hosts were profiled; the table has zero rows.\n");
    }
    out.push('\n');
    out.push_str(&render_table(&headers, &table));
    out.push_str(&format!(
        "\nDistinct addresses: {}\nOn two or more hosts: {}\nIn two or more countries: {}\nOn two or more continents: {}\n",
        emails.distinct, emails.multi_host, emails.multi_country, emails.multi_continent
    ));
    out
}

pub fn overlap_text(c: &OverlapCensus) -> String {
    let headers: Vec<String> = ["Target", "Novel", "Complete copy", "Diverged", "Pending"]
        .map(String::from)
        .into();
    let rows: Vec<Vec<String>> = c
        .targets
        .iter()
        .map(|t| {
            vec![
                t.target.as_str().to_string(),
                t.novel.to_string(),
                t.duplicate_complete.to_string(),
                t.diverged.to_string(),
                t.pending.to_string(),
            ]
        })
        .collect();
    let m = &c.mirrors;
    format!(
        "Overlap of repositories by first and last commit\n\n{}\nShared first commit: {} repositories in {} groups (largest {}) out of {}\nMirrors (shared first and last commit): {}\nDiverged within groups: {}\n\nEligible for analysis: {}\nExcluded as copies: {}\nUnresolved: {}\n",
        render_table(&headers, &rows),
        m.grouped_repositories,
        m.groups,
        m.largest_group,
        m.repositories,
        m.mirror_repositories,
        m.diverged_repositories,
        c.eligible,
        c.excluded,
        c.unresolved
    )
}

fn feature_label(name: &str) -> String {
    match name {
        INTERCEPT => "Constant",
        "files" => "Files",
        "contributors" => "Committers",
        "commits" => "Commits",
        "branches" => "Branches",
        "avg_message_length" => "Average message length",
        "avg_editors_per_file" => "Average editors per file",
        "avg_interevent_hours" => "Average interevent time [h]",
        "lead_workload" => "Lead workload",
        "effective_team_size" => "Effective team size",
        "burstiness" => "Burstiness",
        other => other,
    }
    .to_string()
}

pub fn logistic_text(stats: &StatsOutput) -> String {
    let mut names: Vec<String> = Vec::new();
    for m in &stats.models {
        if let Some(fit) = &m.fit {
            for c in &fit.coefficients {
                if !names.contains(&c.name) {
                    names.push(c.name.clone());
                }
            }
        }
    }
    // constant, then languages, then numeric features
    let (langs, rest): (Vec<String>, Vec<String>) = names.into_iter().partition(|n| n.starts_with(LANGUAGE_PREFIX));
    let (constant, features): (Vec<String>, Vec<String>) = rest.into_iter().partition(|n| n == INTERCEPT);

    let mut headers = vec!["Variable".to_string()];
    for m in &stats.models {
        headers.extend([format!("{} e^B", m.name), "p".into(), "CI".into()]);
    }
    let coef_cells = |name: &str| -> Vec<String> {
        stats
            .models
            .iter()
            .flat_map(|m| match m.fit.as_ref().and_then(|f| f.coefficient(name)) {
                Some(c) => vec![
                    format!("{:.3}", c.odds),
                    format_p(c.p_value),
                    format!("[{:.3},{:.3}]", c.odds_ci_low, c.odds_ci_high),
                ],
                None => vec![String::new(); 3],
            })
            .collect()
    };
    let mut rows = Vec::new();
    for n in &constant {
        let mut r = vec![feature_label(n)];
        r.extend(coef_cells(n));
        rows.push(r);
    }
    if !langs.is_empty() {
        rows.push(vec![format!("Language (vs. {BASELINE_LANGUAGE})")]);
        for n in &langs {
            let mut r = vec![format!("  {}", &n[LANGUAGE_PREFIX.len()..])];
            r.extend(coef_cells(n));
            rows.push(r);
        }
    }
    for n in &features {
        let mut r = vec![feature_label(n)];
        r.extend(coef_cells(n));
        rows.push(r);
    }
    let footer = |label: &str, f: &dyn Fn(&LogisticFitResult) -> String| -> Vec<String> {
        let mut r = vec![label.to_string()];
        for m in &stats.models {
            r.push(m.fit.as_ref().map(f).unwrap_or_default());
            r.extend([String::new(), String::new()]);
        }
        r
    };
    rows.push(footer("-2LL", &|f| format!("{:.3}", f.deviance)));
    rows.push(footer("Pseudo-R2", &|f| format!("{:.3}", f.pseudo_r2)));
    rows.push(footer("N", &|f| f.n.to_string()));

    let mut out = format!(
        "Logistic regression: outcome 1 = {}, 0 = {}\nModel 1 includes top-language indicators; Model 2 does not.\n",
        stats.reference_corpus, stats.comparison_corpus
    );
    for m in &stats.models {
        if let Some(e) = &m.error {
            out.push_str(&format!("{} not fitted: {e}\n", m.name));
        } else if let Some(f) = &m.fit {
            if !f.converged {
                out.push_str(&format!("{} did not converge in {} iterations\n", m.name, f.iterations));
            }
        }
    }
    out.push('\n');
    out + &render_table(&headers, &rows)
}

fn write_text(path: &Path, text: &str) -> Result<(), String> {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Write every report and the per-statistic distribution exports. Returns
/// the written paths relative to `root`.
pub fn emit(root: &Path, inputs: &ReportInputs) -> Result<Vec<String>, String> {
    let reports = root.join(REPORTS);
    fs::create_dir_all(&reports).map_err(|e| e.to_string())?;
    let mut written = Vec::new();
    let mut put = |name: &str, json: &dyn erased::Json, text: String| -> Result<(), String> {
        let j = reports.join(format!("{name}.json"));
        json.write(&j)?;
        write_text(&reports.join(format!("{name}.txt")), &text)?;
        written.push(format!("{REPORTS}/{name}.json"));
        written.push(format!("{REPORTS}/{name}.txt"));
        Ok(())
    };
    put("comparison", &inputs.stats.table_json(), comparison_text(&inputs.stats))?;
    put(
        "geography",
        &serde_json::json!({"regions": inputs.geography, "emails": inputs.overlap.emails}),
        geography_text(&inputs.geography, &inputs.overlap.emails),
    )?;
    put("overlap", &inputs.overlap, overlap_text(&inputs.overlap))?;
    put("logistic", &inputs.stats.models_json(), logistic_text(&inputs.stats))?;

    let dist_root = root.join(EXPORTS).join("distributions");
    if dist_root.exists() {
        fs::remove_dir_all(&dist_root).map_err(|e| e.to_string())?;
    }
    let corpora: BTreeSet<&str> = [
        inputs.stats.reference_corpus.as_str(),
        inputs.stats.comparison_corpus.as_str(),
    ]
    .into();
    for corpus in corpora {
        let dir = dist_root.join(corpus);
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let rows: Vec<&RepoMetrics> = inputs
            .analysis
            .iter()
            .filter(|r| r.corpus == corpus)
            .map(|r| &r.metrics)
            .collect();
        for stat in TABLE_STATISTICS.iter().chain(EXTRA_DISTRIBUTIONS.iter()) {
            let mut v = values(&rows, stat);
            v.sort_by(f64::total_cmp);
            let mut text = String::from("value\n");
            for x in v {
                text.push_str(&format!("{x}\n"));
            }
            write_text(&dir.join(format!("{}.csv", stat.key)), &text)?;
            written.push(format!("{EXPORTS}/distributions/{corpus}/{}.csv", stat.key));
        }
    }
    Ok(written)
}

impl StatsOutput {
    fn table_json(&self) -> serde_json::Value {
        serde_json::json!({
            "reference_corpus": self.reference_corpus,
            "comparison_corpus": self.comparison_corpus,
            "reference_rows": self.reference_rows,
            "comparison_rows": self.comparison_rows,
            "zero_rows": self.reference_rows == 0 || self.comparison_rows == 0,
            "table": self.table,
        })
    }

    fn models_json(&self) -> serde_json::Value {
        serde_json::json!({
            "outcome_one": self.reference_corpus,
            "outcome_zero": self.comparison_corpus,
            "models": self.models.iter().map(|m| serde_json::json!({
                "name": m.name,
                "include_language": m.include_language,
                "census": m.census,
                "error": m.error,
                "fit": m.fit.as_ref().map(|f| serde_json::json!({
                    "coefficients": f.coefficients,
                    "n": f.n,
                    "deviance": f.deviance,
                    "pseudo_r2": f.pseudo_r2,
                    "converged": f.converged,
                    "iterations": f.iterations,
                })),
            })).collect::<Vec<_>>(),
        })
    }
}

mod erased {
    use std::path::Path;

    pub trait Json {
        fn write(&self, path: &Path) -> Result<(), String>;
    }

    impl<T: serde::Serialize> Json for T {
        fn write(&self, path: &Path) -> Result<(), String> {
            super::write_json(path, self).map_err(|e| format!("{}: {e}", path.display()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::{HostKey, Scheme};
    use crate::label::HostLabel;

    fn profile(addr: &str, region: Option<&str>, emails: &[&str], repos: u64) -> HostProfile {
        let label = HostLabel {
            unique_emails: emails.iter().map(|e| e.to_string()).collect(),
            academic_email_fraction: 0.0,
            is_academic: false,
        };
        let geo = region.map(|r| crate::label::GeoLocation {
            country: None,
            continent: Some(r.to_string()),
        });
        HostProfile::new(HostKey::new(addr, 443, Scheme::Https), label, geo, repos)
    }

    #[test]
    fn one_region_gives_one_row() {
        let list = DomainList::new(["uni.example"]);
        let rows = geography_rows(
            &[
                profile("a", Some("OC"), &["x@uni.example", "y@mail.test"], 3),
                profile("b", Some("OC"), &["x@uni.example"], 2),
            ],
            &list,
            &BTreeMap::new(),
        );
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!((r.region.as_str(), r.hosts, r.users, r.repositories), ("OC", 2, 2, 5));
        assert_eq!(r.host_percent, 100.0);
        assert_eq!(r.academic_percent, 50.0);
        assert_eq!(r.repositories_per_capita, None);
    }

    #[test]
    fn regions_are_ordered_and_users_counted_per_region() {
        let list = DomainList::new(Vec::<String>::new());
        let pops = parse_populations("region,population,gh\nEU,1000,26.8\nNA,500\n").unwrap();
        let rows = geography_rows(
            &[
                profile("a", None, &["p@x.org"], 1),
                profile("b", Some("NA"), &["p@x.org", "q@x.org"], 10),
                profile("c", Some("EU"), &["q@x.org"], 4),
                profile("d", Some("ZZ"), &[], 0),
            ],
            &list,
            &pops,
        );
        let regions: Vec<&str> = rows.iter().map(|r| r.region.as_str()).collect();
        assert_eq!(regions, ["EU", "NA", "ZZ", UNKNOWN_REGION]);
        assert_eq!(rows[0].gh_user_percent, Some(26.8));
        assert_eq!(rows[0].repositories_per_capita, Some(0.004));
        assert_eq!(rows[1].repositories_per_capita, Some(0.02));
        assert_eq!(rows[1].user_percent, 100.0);
        assert_eq!(rows[0].user_percent, 50.0);
    }

    #[test]
    fn population_file_errors() {
        assert!(parse_populations("EU,10\nNA,lots\n").is_err());
        assert!(parse_populations("region,population\n").unwrap().is_empty());
        assert!(parse_populations("# comment\nEU,10,abc\n").is_err());
        assert_eq!(parse_populations("").unwrap().len(), 0);
    }

    #[test]
    fn zero_rows_are_announced() {
        let out = analyze(&[], REFERENCE_CORPUS, "github", &StatsConfig::default());
        assert_eq!(out.reference_rows, 0);
        assert!(out.table.iter().all(|r| r.reference.is_none() && r.ks.is_none()));
        assert!(out.models.iter().all(|m| m.error.is_some()));
        let text = comparison_text(&out);
        assert!(text.contains("NOTICE: no penumbra repositories are eligible"));
        assert_eq!(text.lines().filter(|l| l.contains("n/a")).count(), 11);
    }

    #[test]
    fn p_value_formatting() {
        assert_eq!(format_p(0.0004), "< 0.001");
        assert_eq!(format_p(0.5161), "0.516");
    }

    #[test]
    fn tables_are_aligned() {
        let t = render_table(
            &["a".into(), "bb".into()],
            &[vec!["long".into(), "1".into()], vec!["x".into(), "100".into()]],
        );
        assert_eq!(t, "a      bb\n----  ---\nlong    1\nx     100\n");
    }
}
