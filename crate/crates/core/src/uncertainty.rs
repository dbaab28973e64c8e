//! Bingham dispersion statistics of the QCQP matrix and quantile filtering.
//!
//! With `λᴬ₁ ≤ … ≤ λᴬ₄` the spectrum of `A`, the matrix `−A + λᴬ₁ I` has
//! eigenvalues `0 ≥ λ₃ ≥ λ₂ ≥ λ₁`, the Bingham dispersion coefficients of the
//! posterior over orientations. Values closer to zero mean a wider spread.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rep_heads::{PsdMatrix4, QcqpSolution};
use crate::scalar::{c, cu, Real};
use crate::sym_eigen::SymEigen4;

/// Smallest eigenvalue accepted as "PSD up to rounding".
pub const PSD_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionStats<T> {
    pub lambda1: T,
    pub lambda2: T,
    pub lambda3: T,
    /// Largest single-direction dispersion, `λ₃`.
    pub lambda_max: T,
    /// Total dispersion `λ₁ + λ₂ + λ₃`.
    pub trace_stat: T,
    /// Repeated minimum eigenvalue: the mode is not identifiable.
    pub degenerate: bool,
}

/// Which scalar statistic drives filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    LambdaMax,
    #[default]
    Trace,
}

impl std::str::FromStr for Statistic {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda_max" | "lambda-max" => Ok(Self::LambdaMax),
            "trace" | "trace_stat" => Ok(Self::Trace),
            other => Err(invalid(format!("unknown statistic {other}"))),
        }
    }
}

impl<T: Real> DispersionStats<T> {
    pub fn from_eigen(eigen: &SymEigen4<T>) -> Self {
        let v = eigen.values;
        let lambda1 = v[0] - v[3];
        let lambda2 = v[0] - v[2];
        let lambda3 = v[0] - v[1];
        Self {
            lambda1,
            lambda2,
            lambda3,
            lambda_max: lambda3,
            trace_stat: lambda1 + lambda2 + lambda3,
            degenerate: !(eigen.min_gap() >= QcqpSolution::gap_threshold(eigen)),
        }
    }

    pub fn get(&self, which: Statistic) -> T {
        match which {
            Statistic::LambdaMax => self.lambda_max,
            Statistic::Trace => self.trace_stat,
        }
    }

    /// Statistic used for ranking; degenerate spectra rank as most uncertain.
    pub fn filter_value(&self, which: Statistic) -> T {
        if self.degenerate {
            T::infinity()
        } else {
            self.get(which)
        }
    }
}

/// Dispersion statistics of a PSD matrix.
pub fn dispersions<T: Real>(a: &PsdMatrix4<T>) -> Result<DispersionStats<T>> {
    let eigen = a.eigen();
    if eigen.values[0] < -c::<T>(PSD_TOLERANCE) {
        return Err(invalid(format!(
            "matrix is not PSD: minimum eigenvalue {}",
            eigen.values[0]
        )));
    }
    Ok(DispersionStats::from_eigen(&eigen))
}

fn keep_count(n: usize, keep_fraction: f64) -> usize {
    // guard against 0.7 * 10 = 7.000000000000001
    ((keep_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Keeps the `⌈keep_fraction · N⌉` entries with the lowest values and drops
/// the highest ones. Ties are broken by index (earlier index ranks lower).
pub fn quantile_filter<T: Real>(stats: &[T], keep_fraction: f64) -> Result<Vec<bool>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(invalid(format!("keep_fraction {keep_fraction} not in (0, 1]")));
    }
    if stats.is_empty() {
        return Err(invalid("no statistics to filter"));
    }
    if stats.iter().any(|s| s.is_nan()) {
        return Err(invalid("statistics contain NaN"));
    }
    let mut order: Vec<usize> = (0..stats.len()).collect();
    order.sort_by(|&a, &b| stats[a].partial_cmp(&stats[b]).unwrap().then(a.cmp(&b)));
    let keep = keep_count(stats.len(), keep_fraction).min(stats.len());
    let mut mask = vec![false; stats.len()];
    for &i in &order[..keep] {
        mask[i] = true;
    }
    Ok(mask)
}

/// [`quantile_filter`] over per-image dispersion statistics, with degenerate
/// spectra treated as maximally uncertain.
pub fn filter_by_statistic<T: Real>(
    stats: &[DispersionStats<T>],
    which: Statistic,
    keep_fraction: f64,
) -> Result<Vec<bool>> {
    let values: Vec<T> = stats.iter().map(|s| s.filter_value(which)).collect();
    quantile_filter(&values, keep_fraction)
}

/// Mean of a statistic, for logging.
pub fn mean_statistic<T: Real>(stats: &[DispersionStats<T>], which: Statistic) -> T {
    if stats.is_empty() {
        return T::zero();
    }
    stats.iter().map(|s| s.get(which)).sum::<T>() / cu(stats.len())
}
