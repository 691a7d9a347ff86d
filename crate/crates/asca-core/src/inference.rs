//! Permutation significance testing.
//!
//! The design stays fixed; the rows of the data are shuffled K times and
//! the model is refit on each shuffle, giving a null sample of F ratios
//! per term. The p-value is (exceedances + 1) / (K + 1), which can never
//! reach zero: with K = 999 the floor is 0.001.
//!
//! Determinism contract: the K permutations are generated up front from a
//! ChaCha8 stream keyed by the seed (Fisher-Yates, rejection-sampled
//! uniforms, no dependence on platform RNG), then evaluated in any order.
//! Results are identical run to run and at any rayon worker count; the
//! `parallel` feature only changes how fast the loop finishes.

use crate::design::DesignMatrix;
use crate::error::AscaError;
use crate::factorization::sums_of_squares;
use crate::linalg::LeastSquares;
use crate::Result;
use nalgebra::DMatrix;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Slack when counting null F values against the observed one.
/// Permutations that tie the observed statistic algebraically (shuffles
/// within the same level, for instance) reproduce it only to roundoff;
/// the slack makes those count as exceedances, matching the exact
/// enumeration they stand for. The absolute part covers observed F at
/// roundoff scale, where a relative band has no width.
const F_TIE_TOL: f64 = 1e-9;
const F_TIE_ABS: f64 = 1e-12;

/// Null distribution and p-value of one term.
#[derive(Debug, Clone)]
pub struct PermutationResult {
    pub term: String,
    pub f_observed: f64,
    /// Null F ratios in permutation order, length K.
    pub f_null: Vec<f64>,
    pub k: usize,
    pub p: f64,
    pub seed: u64,
}

/// Unbiased integer in 0..bound via rejection sampling on the raw
/// ChaCha8 output. Owning this keeps the byte-level behavior of the
/// permutation stream independent of RNG library internals.
fn uniform_below(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let limit = u64::MAX - u64::MAX % bound;
    loop {
        let v = rng.next_u64();
        if v < limit {
            return v % bound;
        }
    }
}

/// Fisher-Yates shuffle of 0..n driven by the shared stream.
fn sample_permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = uniform_below(rng, i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    perm
}

#[cfg(feature = "parallel")]
fn map_indexed<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_indexed<T, F: Fn(usize) -> T>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Exceedance count with tie slack. Infinite observed F compares by
/// plain `>=` so an infinite null value still counts.
fn exceeds(f_star: f64, f_obs: f64) -> bool {
    if f_obs.is_finite() {
        f_star >= f_obs - (F_TIE_TOL * f_obs.abs() + F_TIE_ABS)
    } else {
        f_star >= f_obs
    }
}

/// Test the named terms by refitting on K row shuffles of `x`. One shared
/// shuffle per iteration serves every term, so the loop costs K refits
/// regardless of how many terms are tested. `reference` matches the
/// ANOVA table: `None` divides by the residual mean square of the same
/// (permuted) fit.
pub fn permutation_test(
    x: &DMatrix<f64>,
    d: &DesignMatrix,
    terms: &[String],
    reference: Option<&str>,
    k: usize,
    seed: u64,
) -> Result<Vec<PermutationResult>> {
    if k == 0 {
        return Err(AscaError::ZeroPermutations);
    }
    if x.nrows() != d.n() {
        return Err(AscaError::ShapeMismatch(format!(
            "data has {} rows but the design has {}",
            x.nrows(),
            d.n()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(AscaError::NonFiniteInput);
    }
    let n = x.nrows();
    let p = d.p();
    if n <= p {
        return Err(AscaError::NoResidualDf);
    }
    let effect_terms = d.effect_terms();
    let mut term_pos = Vec::with_capacity(terms.len());
    for name in terms {
        let pos = effect_terms
            .iter()
            .position(|t| t.name == *name)
            .ok_or_else(|| AscaError::UnknownTerm(name.clone()))?;
        term_pos.push(pos);
    }
    let ref_pos = match reference {
        None => None,
        Some(name) => Some(
            effect_terms
                .iter()
                .position(|t| t.name == name)
                .ok_or_else(|| AscaError::UnknownTerm(name.to_string()))?,
        ),
    };
    let dfs: Vec<f64> = effect_terms.iter().map(|t| t.df() as f64).collect();
    let resid_df = (n - p) as f64;

    let lsq = LeastSquares::new(&d.matrix);

    // F ratios for one right-hand side, every effect term at once.
    let f_of = |data: &DMatrix<f64>| -> Vec<f64> {
        let ss = sums_of_squares(&lsq, d, data);
        let ms_ref = match ref_pos {
            None => ss.residual / resid_df,
            Some(r) => ss.terms[r] / dfs[r],
        };
        ss.terms
            .iter()
            .zip(&dfs)
            .map(|(&s, &df)| (s / df) / ms_ref)
            .collect()
    };

    let f_obs = f_of(x);

    // Permutations come off the stream sequentially so the set is a pure
    // function of (seed, K, N); evaluation order never matters.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perms: Vec<Vec<usize>> = (0..k).map(|_| sample_permutation(&mut rng, n)).collect();

    let f_null_all: Vec<Vec<f64>> = map_indexed(k, |i| {
        let perm = &perms[i];
        let mut shuffled = DMatrix::zeros(n, x.ncols());
        for (dst, &src) in perm.iter().enumerate() {
            shuffled.row_mut(dst).copy_from(&x.row(src));
        }
        f_of(&shuffled)
    });

    let results = term_pos
        .iter()
        .zip(terms)
        .map(|(&pos, name)| {
            let observed = f_obs[pos];
            let f_null: Vec<f64> = f_null_all.iter().map(|fs| fs[pos]).collect();
            let p = if observed.is_nan() {
                f64::NAN
            } else {
                let count = f_null.iter().filter(|&&f| exceeds(f, observed)).count();
                (count + 1) as f64 / (k + 1) as f64
            };
            PermutationResult {
                term: name.clone(),
                f_observed: observed,
                f_null,
                k,
                p,
                seed,
            }
        })
        .collect();
    Ok(results)
}
