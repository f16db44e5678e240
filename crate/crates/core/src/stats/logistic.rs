//! Binary logistic regression by Newton-Raphson.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use super::design::DesignMatrix;

pub const INTERCEPT: &str = "(intercept)";
const Z_95: f64 = 1.959963984540054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Convergence threshold on the Newton decrement `g' H^-1 g`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub beta: f64,
    pub std_error: f64,
    pub odds: f64,
    pub p_value: f64,
    pub odds_ci_low: f64,
    pub odds_ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFitResult {
    pub coefficients: Vec<Coefficient>,
    pub n: usize,
    pub log_likelihood: f64,
    pub null_log_likelihood: f64,
    /// -2 log-likelihood.
    pub deviance: f64,
    pub pseudo_r2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Newton decrement at the returned estimate.
    pub gradient_norm: f64,
    /// -2 log-likelihood at the start and after every iteration.
    pub deviance_trace: Vec<f64>,
}

impl LogisticFitResult {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("no rows to fit")]
    Empty,
    #[error("outcome must be 0 or 1")]
    BadOutcome,
    #[error("design matrix is rank deficient; dependent columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },
    #[error("perfect separation: coefficients diverge ({})", .columns.join(", "))]
    Separation { columns: Vec<String> },
    #[error("information matrix is singular at iteration {0}")]
    Singular(usize),
}

/// Column-wise RMS scale; all-zero columns get scale 1 (the rank check
/// rejects them).
fn column_scales(x: &DMatrix<f64>) -> Vec<f64> {
    (0..x.ncols())
        .map(|j| {
            let rms = (x.column(j).iter().map(|v| v * v).sum::<f64>() / x.nrows() as f64).sqrt();
            if rms > 0.0 {
                rms
            } else {
                1.0
            }
        })
        .collect()
}

/// Modified Gram-Schmidt; returns the columns whose residual vanishes
/// relative to their own norm.
fn dependent_columns(x: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut bad = Vec::new();
    for (col, name) in x.column_iter().zip(names) {
        let norm = col.norm();
        let mut r = col.into_owned();
        for q in &basis {
            let proj = q.dot(&r);
            r -= q * proj;
        }
        let rn = r.norm();
        if norm == 0.0 || rn <= 1e-9 * norm {
            bad.push(name.clone());
        } else {
            basis.push(r / rn);
        }
    }
    bad
}

fn log_likelihood(eta: &DVector<f64>, y: &DVector<f64>) -> f64 {
    // y*eta - log(1 + e^eta), computed stably
    eta.iter()
        .zip(y.iter())
        .map(|(e, yi)| {
            let softplus = if *e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            yi * e - softplus
        })
        .sum()
}

fn sigmoid(e: f64) -> f64 {
    if e >= 0.0 {
        1.0 / (1.0 + (-e).exp())
    } else {
        let z = e.exp();
        z / (1.0 + z)
    }
}

/// Fit on a design matrix; an intercept column is prepended.
pub fn logistic_fit(design: &DesignMatrix, opts: FitOptions) -> Result<LogisticFitResult, FitError> {
    let mut names = vec![INTERCEPT.to_string()];
    names.extend(design.columns.iter().cloned());
    fit_raw(&design.rows, &design.outcome, &names, opts)
}

/// Fit on raw rows whose first column is already the intercept (or absent
/// entirely, if `names` says so).
pub fn fit_raw(rows: &[Vec<f64>], outcome: &[f64], names: &[String], opts: FitOptions) -> Result<LogisticFitResult, FitError> {
    let n = rows.len();
    if n == 0 {
        return Err(FitError::Empty);
    }
    if outcome.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(FitError::BadOutcome);
    }
    let p = names.len();
    let has_intercept = names.first().is_some_and(|s| s == INTERCEPT);
    let raw = DMatrix::from_fn(n, p, |i, j| {
        if has_intercept {
            if j == 0 {
                1.0
            } else {
                rows[i][j - 1]
            }
        } else {
            rows[i][j]
        }
    });
    let bad = dependent_columns(&raw, names);
    if !bad.is_empty() {
        return Err(FitError::RankDeficient { columns: bad });
    }
    let scales = column_scales(&raw);
    let mut x = raw;
    for (j, s) in scales.iter().enumerate() {
        x.column_mut(j).scale_mut(1.0 / s);
    }
    let y = DVector::from_column_slice(outcome);

    let mut beta = DVector::zeros(p);
    let mut eta = &x * &beta;
    let mut ll = log_likelihood(&eta, &y);
    let mut trace = vec![-2.0 * ll];
    let mut iterations = 0;
    let mut converged = false;
    let mut decrement = f64::INFINITY;
    let mut info = DMatrix::zeros(p, p);

    for it in 0..=opts.max_iter {
        let probs = eta.map(sigmoid);
        let grad = x.transpose() * (&y - &probs);
        let w = probs.map(|m| m * (1.0 - m));
        let xw = DMatrix::from_fn(n, p, |i, j| x[(i, j)] * w[i]);
        info = x.transpose() * xw;
        let chol = info.clone().cholesky().ok_or(FitError::Singular(it))?;
        let step = chol.solve(&grad);
        decrement = grad.dot(&step);
        if it == opts.max_iter {
            break;
        }
        converged = decrement <= opts.tol;
        let mut t = 1.0;
        let (mut next_beta, mut next_eta, mut next_ll);
        loop {
            next_beta = &beta + &step * t;
            next_eta = &x * &next_beta;
            next_ll = log_likelihood(&next_eta, &y);
            if next_ll >= ll || t < 1e-10 {
                break;
            }
            t *= 0.5;
        }
        if next_ll < ll {
            // no ascent possible along the Newton direction
            break;
        }
        beta = next_beta;
        eta = next_eta;
        ll = next_ll;
        iterations = it + 1;
        trace.push(-2.0 * ll);
        if converged {
            // refresh the information matrix at the final estimate
            let probs = eta.map(sigmoid);
            let w = probs.map(|m| m * (1.0 - m));
            info = x.transpose() * DMatrix::from_fn(n, p, |i, j| x[(i, j)] * w[i]);
            break;
        }
    }

    let diverging: Vec<String> = names
        .iter()
        .zip(beta.iter())
        .filter(|(_, b)| b.abs() > 25.0)
        .map(|(n, _)| n.clone())
        .collect();
    let saturated = eta.iter().zip(y.iter()).all(|(e, yi)| (sigmoid(*e) - yi).abs() < 1e-6);
    if (!converged && !diverging.is_empty()) || saturated {
        return Err(FitError::Separation {
            columns: if diverging.is_empty() { names.to_vec() } else { diverging },
        });
    }

    let cov = info.cholesky().ok_or(FitError::Singular(iterations))?.inverse();
    let ybar = y.mean();
    let null_ll = if ybar <= 0.0 || ybar >= 1.0 {
        0.0
    } else {
        n as f64 * (ybar * ybar.ln() + (1.0 - ybar) * (1.0 - ybar).ln())
    };
    let coefficients = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let b = beta[j] / scales[j];
            let se = cov[(j, j)].sqrt() / scales[j];
            let z = b / se;
            Coefficient {
                name: name.clone(),
                beta: b,
                std_error: se,
                odds: b.exp(),
                p_value: erfc(z.abs() / std::f64::consts::SQRT_2),
                odds_ci_low: (b - Z_95 * se).exp(),
                odds_ci_high: (b + Z_95 * se).exp(),
            }
        })
        .collect();
    Ok(LogisticFitResult {
        coefficients,
        n,
        log_likelihood: ll,
        null_log_likelihood: null_ll,
        deviance: -2.0 * ll,
        pseudo_r2: if null_ll == 0.0 { 0.0 } else { 1.0 - ll / null_ll },
        iterations,
        converged,
        gradient_norm: decrement,
        deviance_trace: trace,
    })
}
