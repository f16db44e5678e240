//! Time-matched comparison sample: for every month in which reference
//! repositories began, draw proportionally more creation events from the
//! comparison platform.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crawler::RepoRef;
use crate::fingerprint::HostKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonPlan {
    pub oversample_factor: f64,
    /// Reference repositories per month (`YYYY-MM`).
    pub reference: BTreeMap<String, u64>,
    /// Comparison repositories wanted per month.
    pub targets: BTreeMap<String, u64>,
}

impl ComparisonPlan {
    pub fn planned_size(&self) -> u64 {
        self.targets.values().sum()
    }
}

pub fn month_of(t: DateTime<Utc>) -> String {
    t.format("%Y-%m").to_string()
}

/// Targets are the reference counts times `factor`, rounded up.
pub fn build_comparison_plan(reference: &BTreeMap<String, u64>, factor: f64) -> ComparisonPlan {
    let targets = reference
        .iter()
        .map(|(m, n)| {
            let scaled = *n as f64 * factor;
            // guard against 10 * 1.5 landing a hair above 15
            let t = if (scaled - scaled.round()).abs() < 1e-9 {
                scaled.round()
            } else {
                scaled.ceil()
            };
            (m.clone(), t as u64)
        })
        .collect();
    ComparisonPlan {
        oversample_factor: factor,
        reference: reference.clone(),
        targets,
    }
}

#[derive(Debug, Error)]
pub enum ComparisonError {
    #[error("cannot read events file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
enum RepoField {
    Name(String),
    Object { name: String },
}

/// One creation event. Accepts `{"repo": "owner/name", "created_at": ...}`
/// and the archive form `{"repo": {"name": "owner/name"}, "created_at": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
struct RawEvent {
    repo: RepoField,
    created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreationEvent {
    pub full_name: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub month: String,
    pub target: u64,
    pub available: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSample {
    pub refs: Vec<RepoRef>,
    pub shortfalls: Vec<Shortfall>,
    /// Lines that were not valid events.
    pub skipped_lines: Vec<usize>,
}

pub fn parse_events(text: &str) -> (Vec<CreationEvent>, Vec<usize>) {
    let mut events = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawEvent>(line) {
            Ok(e) => {
                let full_name = match e.repo {
                    RepoField::Name(n) | RepoField::Object { name: n } => n,
                };
                if full_name.split('/').filter(|p| !p.is_empty()).count() == 2 {
                    events.push(CreationEvent {
                        full_name,
                        created_at: e.created_at,
                    });
                } else {
                    skipped.push(i + 1);
                }
            }
            Err(_) => skipped.push(i + 1),
        }
    }
    (events, skipped)
}

/// Sample each month's events uniformly without replacement up to the
/// plan's target. Candidates are ordered by name before sampling so the
/// draw depends only on the event set and the seed.
pub fn sample_events(
    events: &[CreationEvent],
    plan: &ComparisonPlan,
    platform: &HostKey,
    seed: u64,
) -> (Vec<CreationEvent>, Vec<Shortfall>) {
    let mut by_month: BTreeMap<String, Vec<&CreationEvent>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for e in events {
        if seen.insert(e.full_name.as_str()) {
            by_month.entry(month_of(e.created_at)).or_default().push(e);
        }
    }
    let _ = platform;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    let mut shortfalls = Vec::new();
    for (month, target) in &plan.targets {
        let mut candidates = by_month.remove(month).unwrap_or_default();
        candidates.sort_by(|a, b| a.full_name.cmp(&b.full_name));
        let available = candidates.len() as u64;
        if available < *target {
            shortfalls.push(Shortfall {
                month: month.clone(),
                target: *target,
                available,
            });
        }
        let k = (*target).min(available) as usize;
        let mut idx = rand::seq::index::sample(&mut rng, candidates.len(), k).into_vec();
        idx.sort_unstable();
        chosen.extend(idx.into_iter().map(|i| candidates[i].clone()));
    }
    (chosen, shortfalls)
}

/// Read the events file, sample it and turn the draws into clone targets
/// on `platform`.
pub fn ingest_comparison_corpus(
    events_file: &Path,
    plan: &ComparisonPlan,
    platform: &HostKey,
    seed: u64,
) -> Result<ComparisonSample, ComparisonError> {
    let text = std::fs::read_to_string(events_file).map_err(|source| ComparisonError::Io {
        path: events_file.display().to_string(),
        source,
    })?;
    let (events, skipped_lines) = parse_events(&text);
    let (chosen, shortfalls) = sample_events(&events, plan, platform, seed);
    let refs = chosen
        .iter()
        .map(|e| {
            let (owner, name) = e.full_name.split_once('/').expect("validated");
            RepoRef::on_host(platform, owner, name, e.created_at)
        })
        .collect();
    Ok(ComparisonSample {
        refs,
        shortfalls,
        skipped_lines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::Scheme;
    use chrono::TimeZone;

    fn hist(v: &[(&str, u64)]) -> BTreeMap<String, u64> {
        v.iter().map(|(m, n)| (m.to_string(), *n)).collect()
    }

    #[test]
    fn plan_examples() {
        let p = build_comparison_plan(&hist(&[("2020-01", 10), ("2020-02", 20)]), 1.5);
        assert_eq!(p.targets, hist(&[("2020-01", 15), ("2020-02", 30)]));
        assert_eq!(p.planned_size(), 45);
        let p = build_comparison_plan(&hist(&[("2020-01", 10), ("2020-02", 20)]), 1.0);
        assert_eq!(p.targets, p.reference);
        let p = build_comparison_plan(&hist(&[("2021-03", 3)]), 1.5);
        assert_eq!(p.targets, hist(&[("2021-03", 5)]));
    }

    fn events(month: u32, n: usize) -> Vec<CreationEvent> {
        (0..n)
            .map(|i| CreationEvent {
                full_name: format!("o{i}/r{i}"),
                created_at: Utc.with_ymd_and_hms(2020, month, 1 + (i % 27) as u32, 0, 0, 0).unwrap(),
            })
            .collect()
    }

    fn gh() -> HostKey {
        HostKey::new("github.com", 443, Scheme::Https)
    }

    #[test]
    fn sampling_is_seeded_and_without_replacement() {
        let ev = events(1, 100);
        let plan = build_comparison_plan(&hist(&[("2020-01", 10)]), 1.5);
        let (a, short) = sample_events(&ev, &plan, &gh(), 42);
        assert_eq!(a.len(), 15);
        assert!(short.is_empty());
        let names: HashSet<_> = a.iter().map(|e| &e.full_name).collect();
        assert_eq!(names.len(), 15);
        let (b, _) = sample_events(&ev, &plan, &gh(), 42);
        assert_eq!(a, b);
        let mut shuffled = ev.clone();
        shuffled.reverse();
        assert_eq!(sample_events(&shuffled, &plan, &gh(), 42).0, a);
        assert_ne!(sample_events(&ev, &plan, &gh(), 43).0, a);
    }

    #[test]
    fn short_months_are_annotated() {
        let plan = build_comparison_plan(&hist(&[("2020-02", 10)]), 1.5);
        let (a, short) = sample_events(&events(2, 5), &plan, &gh(), 1);
        assert_eq!(a.len(), 5);
        assert_eq!(
            short,
            vec![Shortfall {
                month: "2020-02".into(),
                target: 15,
                available: 5
            }]
        );
    }

    #[test]
    fn event_formats() {
        let text = "{\"repo\":\"a/b\",\"created_at\":\"2021-03-01T00:00:00Z\"}\n\
                    {\"type\":\"CreateEvent\",\"repo\":{\"id\":1,\"name\":\"c/d\"},\"created_at\":\"2021-03-02T00:00:00Z\"}\n\
                    \n\
                    not json\n\
                    {\"repo\":\"no-owner\",\"created_at\":\"2021-03-02T00:00:00Z\"}\n";
        let (ev, skipped) = parse_events(text);
        assert_eq!(ev.iter().map(|e| e.full_name.as_str()).collect::<Vec<_>>(), vec!["a/b", "c/d"]);
        assert_eq!(skipped, vec![4, 5]);
    }

    #[test]
    fn ingest_builds_clone_targets() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("events.jsonl");
        std::fs::write(&p, "{\"repo\":\"a/b\",\"created_at\":\"2021-03-01T00:00:00Z\"}\n").unwrap();
        let plan = build_comparison_plan(&hist(&[("2021-03", 1)]), 1.0);
        let s = ingest_comparison_corpus(&p, &plan, &gh(), 0).unwrap();
        assert_eq!(s.refs.len(), 1);
        assert_eq!(s.refs[0].clone_url, "https://github.com/a/b.git");
        assert!(matches!(
            ingest_comparison_corpus(&dir.path().join("missing"), &plan, &gh(), 0),
            Err(ComparisonError::Io { .. })
        ));
    }
}
