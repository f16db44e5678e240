//! Two-population comparison: summary statistics, KS tests and logistic
//! regression.

pub mod design;
pub mod ks;
pub mod logistic;
pub mod summary;

pub use design::{build_design_matrix, DesignError, DesignMatrix, DesignOptions, DeletionCensus};
pub use ks::{kolmogorov_sf, ks_two_sample, KsResult};
pub use logistic::{logistic_fit, Coefficient, FitError, FitOptions, LogisticFitResult};
pub use summary::{percentile, summarize, SummaryStats};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SampleError {
    #[error("sample is empty")]
    Empty,
    #[error("sample contains a non-finite value")]
    NonFinite,
}

pub(crate) fn sorted_finite(values: &[f64]) -> Result<Vec<f64>, SampleError> {
    if values.is_empty() {
        return Err(SampleError::Empty);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(SampleError::NonFinite);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}
