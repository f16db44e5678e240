use serde::{Deserialize, Serialize};

use super::{sorted_finite, SampleError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub p5: f64,
    pub p95: f64,
}

/// Percentile `q` in [0, 1] of sorted data, interpolating linearly between
/// order statistics at rank `q (n - 1)`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Result<SummaryStats, SampleError> {
    let v = sorted_finite(values)?;
    Ok(SummaryStats {
        n: v.len(),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        median: percentile(&v, 0.5),
        p5: percentile(&v, 0.05),
        p95: percentile(&v, 0.95),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = summarize(&v).unwrap();
        assert_eq!(s.mean, 50.5);
        assert_eq!(s.median, 50.5);
        assert!((s.p5 - 5.95).abs() < 1e-12);
        assert!((s.p95 - 95.05).abs() < 1e-12);
        let s = summarize(&[5.0]).unwrap();
        assert_eq!((s.mean, s.median, s.p5, s.p95, s.n), (5.0, 5.0, 5.0, 5.0, 1));
        assert_eq!(summarize(&[]), Err(SampleError::Empty));
        assert_eq!(summarize(&[1.0, f64::NAN]), Err(SampleError::NonFinite));
    }

    /// Independent route: the rank-`h` value by direct selection, without
    /// the shared helper.
    fn oracle(values: &[f64], q: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let h = (v.len() as f64 - 1.0) * q;
        let i = h as usize;
        if i + 1 >= v.len() {
            return v[v.len() - 1];
        }
        v[i] * (1.0 - (h - i as f64)) + v[i + 1] * (h - i as f64)
    }

    proptest! {
        #[test]
        fn matches_sort_oracle(v in prop::collection::vec(-1e6f64..1e6, 1..200)) {
            let s = summarize(&v).unwrap();
            for (got, q) in [(s.median, 0.5), (s.p5, 0.05), (s.p95, 0.95)] {
                let o = oracle(&v, q);
                prop_assert!((got - o).abs() <= 1e-12 * o.abs().max(1.0), "{} vs {}", got, o);
            }
            prop_assert!(s.p5 <= s.median && s.median <= s.p95);
        }
    }
}
