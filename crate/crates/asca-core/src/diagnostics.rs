//! Residual diagnostics: squared prediction error, score-space
//! distance, empirical control limits, autocorrelation, and per-level
//! dispersion summaries.

use crate::error::AscaError;
use crate::linalg::row_sq_norms;
use crate::Result;
use nalgebra::{DMatrix, DVector};

/// Squared prediction error per observation: the squared norm of each
/// residual row. Summing the vector reproduces the residual sum of
/// squares bit for bit, because the table code accumulates it the same
/// way.
pub fn q_statistic(residuals: &DMatrix<f64>) -> DVector<f64> {
    row_sq_norms(residuals)
}

/// Score-space distance per observation: each score coordinate squared
/// over its component variance sigma_r^2 / (n - 1), summed over
/// components. Zero-variance components carry no information and are
/// skipped.
pub fn d_statistic(
    scores: &DMatrix<f64>,
    singular_values: &DVector<f64>,
) -> Result<DVector<f64>> {
    if scores.ncols() != singular_values.len() {
        return Err(AscaError::ShapeMismatch(format!(
            "{} score columns but {} singular values",
            scores.ncols(),
            singular_values.len()
        )));
    }
    let n = scores.nrows();
    if n < 2 {
        return Err(AscaError::ShapeMismatch(
            "score distance needs at least two rows".into(),
        ));
    }
    let variances: Vec<f64> = singular_values
        .iter()
        .map(|s| s * s / (n - 1) as f64)
        .collect();
    let mut d = DVector::zeros(n);
    for i in 0..n {
        let mut acc = 0.0;
        for (r, &var) in variances.iter().enumerate() {
            if var > 0.0 {
                let t = scores[(i, r)];
                acc += t * t / var;
            }
        }
        d[i] = acc;
    }
    Ok(d)
}

/// Empirical percentile of a sample, linear interpolation between order
/// statistics (the convention where the k-th of n sorted values sits at
/// probability (k-1)/(n-1)).
pub fn control_limit(values: &[f64], percentile: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(AscaError::EmptyInput);
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(AscaError::PercentileOutOfRange(percentile));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AscaError::NonFiniteInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let h = (sorted.len() - 1) as f64 * percentile / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Sample autocorrelation up to `max_lag`, biased estimator with the
/// full-series denominator, so the lag-0 value is exactly one and every
/// coefficient stays within [-1, 1].
pub fn sample_acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n == 0 {
        return Err(AscaError::EmptyInput);
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(AscaError::NonFiniteInput);
    }
    if max_lag >= n {
        return Err(AscaError::SeriesTooShort { n, lag: max_lag });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let denom: f64 = series.iter().map(|v| (v - mean) * (v - mean)).sum();
    if denom == 0.0 {
        return Err(AscaError::ConstantSeries);
    }
    let mut acf = Vec::with_capacity(max_lag + 1);
    acf.push(1.0);
    for k in 1..=max_lag {
        let num: f64 = (0..n - k)
            .map(|t| (series[t] - mean) * (series[t + k] - mean))
            .sum();
        acf.push(num / denom);
    }
    Ok(acf)
}

/// Five-number dispersion summary of pooled residuals for one factor
/// level.
#[derive(Debug, Clone)]
pub struct BoxSummary {
    pub level: usize,
    /// Pooled residual cells, not rows.
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Smallest value at or above q1 - 1.5 IQR.
    pub whisker_low: f64,
    /// Largest value at or below q3 + 1.5 IQR.
    pub whisker_high: f64,
    /// Values beyond the whiskers, ascending.
    pub outliers: Vec<f64>,
}

fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Tukey box summaries of residual cells pooled by factor level.
/// `row_levels[i]` assigns row i of the residual matrix to a level;
/// every level in 0..n_levels gets a summary, empty ones with n = 0 and
/// NaN statistics.
pub fn residual_dispersion(
    residuals: &DMatrix<f64>,
    row_levels: &[usize],
    n_levels: usize,
) -> Result<Vec<BoxSummary>> {
    if row_levels.len() != residuals.nrows() {
        return Err(AscaError::ShapeMismatch(format!(
            "{} level assignments for {} residual rows",
            row_levels.len(),
            residuals.nrows()
        )));
    }
    if let Some(&bad) = row_levels.iter().find(|&&l| l >= n_levels) {
        return Err(AscaError::LevelOutOfRange {
            factor: "dispersion".into(),
            level: bad,
            n_levels,
        });
    }
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(AscaError::NonFiniteInput);
    }

    let mut pools: Vec<Vec<f64>> = vec![Vec::new(); n_levels];
    for (i, &level) in row_levels.iter().enumerate() {
        for v in residuals.row(i).iter() {
            pools[level].push(*v);
        }
    }

    let mut out = Vec::with_capacity(n_levels);
    for (level, mut pool) in pools.into_iter().enumerate() {
        if pool.is_empty() {
            out.push(BoxSummary {
                level,
                n: 0,
                median: f64::NAN,
                q1: f64::NAN,
                q3: f64::NAN,
                whisker_low: f64::NAN,
                whisker_high: f64::NAN,
                outliers: Vec::new(),
            });
            continue;
        }
        pool.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let q1 = percentile_sorted(&pool, 25.0);
        let median = percentile_sorted(&pool, 50.0);
        let q3 = percentile_sorted(&pool, 75.0);
        let iqr = q3 - q1;
        let fence_low = q1 - 1.5 * iqr;
        let fence_high = q3 + 1.5 * iqr;
        let whisker_low = *pool
            .iter()
            .find(|&&v| v >= fence_low)
            .expect("q1 itself is inside the fence");
        let whisker_high = *pool
            .iter()
            .rev()
            .find(|&&v| v <= fence_high)
            .expect("q3 itself is inside the fence");
        let outliers = pool
            .iter()
            .copied()
            .filter(|&v| v < fence_low || v > fence_high)
            .collect();
        out.push(BoxSummary {
            level,
            n: pool.len(),
            median,
            q1,
            q3,
            whisker_low,
            whisker_high,
            outliers,
        });
    }
    Ok(out)
}
