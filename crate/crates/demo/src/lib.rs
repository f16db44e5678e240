//! Browser bindings for three calculations: team metrics from per-person
//! commit counts, burstiness of a daily commit series, and the two-sample
//! Kolmogorov-Smirnov test. Inputs are free-form number lists; results are
//! JSON strings.

use penumbra_core::metrics::team::work_entropy_bits;
use penumbra_core::metrics::{effective_team_size, is_dominated, lead_workload, BurstinessSeries, WorkDistribution};
use penumbra_core::stats::ks::ks_two_sample;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Numbers separated by commas, semicolons or whitespace.
pub fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c == ';' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: {t:?}")))
        .collect()
}

fn parse_counts(text: &str) -> Result<Vec<u64>, String> {
    parse_numbers(text)?
        .into_iter()
        .map(|v| {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as u64)
            } else {
                Err(format!("counts must be whole numbers, got {v}"))
            }
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct TeamSummary {
    pub contributors: usize,
    pub commits: u64,
    pub entropy_bits: f64,
    pub effective_team_size: f64,
    pub lead_workload: f64,
    pub dominated: bool,
}

pub fn team_summary(counts: &str) -> Result<TeamSummary, String> {
    let counts = parse_counts(counts)?;
    let dist = WorkDistribution::from_counts(&counts).map_err(|e| e.to_string())?;
    Ok(TeamSummary {
        contributors: dist.contributors(),
        commits: dist.total(),
        entropy_bits: work_entropy_bits(&dist),
        effective_team_size: effective_team_size(&dist),
        lead_workload: lead_workload(&dist),
        dominated: is_dominated(&dist),
    })
}

#[derive(Debug, Serialize)]
pub struct BurstSummary {
    pub days: usize,
    pub mean: f64,
    pub variance: f64,
    pub dispersion: f64,
}

pub fn burst_summary(daily: &str) -> Result<BurstSummary, String> {
    let counts = parse_counts(daily)?;
    if counts.is_empty() {
        return Err("enter at least one daily count".into());
    }
    let s = BurstinessSeries::from_counts(counts);
    Ok(BurstSummary {
        days: s.daily_counts.len(),
        mean: s.mean,
        variance: s.variance,
        dispersion: s.dispersion(),
    })
}

pub fn ks_summary(a: &str, b: &str) -> Result<penumbra_core::stats::ks::KsResult, String> {
    ks_two_sample(&parse_numbers(a)?, &parse_numbers(b)?).map_err(|e| e.to_string())
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
        .and_then(|v| serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string())))
}

#[wasm_bindgen(js_name = teamMetrics)]
pub fn team_metrics(counts: &str) -> Result<String, JsError> {
    to_json(team_summary(counts))
}

#[wasm_bindgen]
pub fn burstiness(daily_counts: &str) -> Result<String, JsError> {
    to_json(burst_summary(daily_counts))
}

#[wasm_bindgen(js_name = ksTest)]
pub fn ks_test(a: &str, b: &str) -> Result<String, JsError> {
    to_json(ks_summary(a, b))
}
