//! Thin least-squares, SVD, and norm kernels on top of nalgebra.
//!
//! Every sum of squares in the crate flows through [`row_sq_norms`] so that
//! accumulation order is fixed: per-row totals first, rows added in order.
//! That makes identities like "sum of per-row squared residuals equals the
//! residual sum of squares" hold bitwise, not just approximately.
//!
//! Singular value decompositions go through [`thin_svd`], which works on
//! the smaller of the two Gram matrices with a symmetric eigensolver.
//! nalgebra's bidiagonal SVD misfactors some rank-deficient inputs (the
//! product of its factors can miss the input by more than a tenth), and
//! effect matrices are rank deficient by construction, so it is not used
//! here. The Gram route is also far cheaper on the short, wide tables
//! this crate produces.

use nalgebra::{DMatrix, DVector};

/// Relative threshold below which an R diagonal entry is treated as zero.
const RANK_TOL: f64 = 1e-12;

/// Relative singular value cutoff for the Gram-based SVD. Squaring the
/// matrix halves the usable precision: a true zero surfaces as roughly
/// sigma_max * 1e-8, so anything below sigma_max * 1e-6 is
/// indistinguishable from noise and treated as null.
const GRAM_RANK_TOL: f64 = 1e-6;

/// Per-row squared Euclidean norms, entries summed left to right.
pub fn row_sq_norms(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        m.nrows(),
        m.row_iter().map(|r| r.iter().map(|v| v * v).sum::<f64>()),
    )
}

/// Squared Frobenius norm with the same accumulation order as
/// [`row_sq_norms`] followed by a plain sum over rows.
pub fn frob_sq(m: &DMatrix<f64>) -> f64 {
    row_sq_norms(m).iter().sum()
}

/// Column means.
pub fn col_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.iter().sum::<f64>() / n))
}

/// Compact singular value decomposition, x = u * diag(sigma) * v'.
///
/// Always min(n, m) components, singular values descending and clamped at
/// zero. The side derived from the Gram eigenvectors is orthonormal in
/// full; columns of the other side belonging to singular values at
/// roundoff scale are left as zero vectors, since x carries no direction
/// for them.
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    /// Count of singular values meaningfully above zero.
    pub fn rank(&self) -> usize {
        let tol = self.sigma.max() * GRAM_RANK_TOL;
        self.sigma.iter().filter(|&&s| s > tol).count()
    }
}

pub fn thin_svd(x: &DMatrix<f64>) -> ThinSvd {
    let (n, m) = x.shape();
    let k = n.min(m);
    let tall = n >= m;
    let gram = if tall {
        x.transpose() * x
    } else {
        x * x.transpose()
    };
    let eig = gram.symmetric_eigen();

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("gram eigenvalues are finite")
    });

    let mut sigma = DVector::zeros(k);
    let mut w = DMatrix::zeros(k, k);
    for (out, &src) in order.iter().enumerate() {
        sigma[out] = eig.eigenvalues[src].max(0.0).sqrt();
        w.set_column(out, &eig.eigenvectors.column(src));
    }
    let cutoff = sigma[0] * GRAM_RANK_TOL;

    // The eigenvector side is exact; the other side is x applied to it,
    // scaled back by the singular value where that is well defined.
    let mut other = DMatrix::zeros(if tall { n } else { m }, k);
    for c in 0..k {
        if sigma[c] > cutoff && sigma[c] > 0.0 {
            let col = if tall {
                x * w.column(c) / sigma[c]
            } else {
                x.transpose() * w.column(c) / sigma[c]
            };
            other.set_column(c, &col);
        }
    }
    // Widely spread singular values leave the derived side slightly
    // oblique; one Gram-Schmidt pass in descending order restores
    // orthonormality without moving the dominant directions.
    for c in 0..k {
        if sigma[c] <= cutoff || sigma[c] == 0.0 {
            continue;
        }
        for j in 0..c {
            if sigma[j] <= cutoff || sigma[j] == 0.0 {
                continue;
            }
            let prev: DVector<f64> = other.column(j).into();
            let proj = prev.dot(&other.column(c).into_owned());
            let mut col = other.column_mut(c);
            col.axpy(-proj, &prev, 1.0);
        }
        let norm = other.column(c).norm();
        if norm > 0.0 {
            other.column_mut(c).scale_mut(1.0 / norm);
        }
    }

    if tall {
        ThinSvd {
            u: other,
            sigma,
            v: w,
        }
    } else {
        ThinSvd {
            u: w,
            sigma,
            v: other,
        }
    }
}

/// Least-squares solver for a fixed left-hand side.
///
/// Factors the design once; [`solve`](Self::solve) then handles any number
/// of right-hand sides, which is what the permutation loop needs. A full
/// column rank design goes through the economy QR; a rank-deficient one
/// falls back to a minimum-norm pseudo-inverse and sets
/// [`rank_deficient`](Self::rank_deficient).
pub struct LeastSquares {
    qt: DMatrix<f64>,
    r: DMatrix<f64>,
    pinv: Option<DMatrix<f64>>,
    pub rank_deficient: bool,
    pub rank: usize,
}

impl LeastSquares {
    /// Factor `d` (n x p, n >= p assumed for a sensible model).
    pub fn new(d: &DMatrix<f64>) -> Self {
        let p = d.ncols();
        let qr = d.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let max_diag = (0..p).map(|i| r[(i, i)].abs()).fold(0.0_f64, f64::max);
        let tol = max_diag * RANK_TOL * (d.nrows().max(p) as f64);
        let deficient = (0..p).any(|i| r[(i, i)].abs() <= tol);

        if deficient {
            let svd = thin_svd(d);
            let eps = svd.sigma.max() * GRAM_RANK_TOL;
            let rank = svd.sigma.iter().filter(|&&s| s > eps).count();
            // Pseudo-inverse v * diag(1/sigma) * u', zero weight on the
            // null directions, gives the minimum-norm solution.
            let mut vs = svd.v.clone();
            for c in 0..svd.sigma.len() {
                let w = if svd.sigma[c] > eps {
                    1.0 / svd.sigma[c]
                } else {
                    0.0
                };
                vs.column_mut(c).scale_mut(w);
            }
            let pinv = vs * svd.u.transpose();
            LeastSquares {
                qt: q.transpose(),
                r,
                pinv: Some(pinv),
                rank_deficient: true,
                rank,
            }
        } else {
            LeastSquares {
                qt: q.transpose(),
                r,
                pinv: None,
                rank_deficient: false,
                rank: p,
            }
        }
    }

    /// Coefficients minimizing ||d * theta - x||_F, one column per column
    /// of `x`. Minimum-norm coefficients when the design is deficient.
    pub fn solve(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        if let Some(pinv) = &self.pinv {
            return pinv * x;
        }
        let qtx = &self.qt * x;
        self.r
            .solve_upper_triangular(&qtx)
            .expect("full-rank R is invertible")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn row_sq_norms_sums_rows() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 0.0, 2.0]);
        let q = row_sq_norms(&m);
        assert_eq!(q[0], 25.0);
        assert_eq!(q[1], 4.0);
        assert_eq!(frob_sq(&m), 29.0);
    }

    #[test]
    fn solves_overdetermined_system() {
        // d is 4x2 with known coefficients.
        let d = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let theta_true = DMatrix::from_row_slice(2, 1, &[0.5, -2.0]);
        let x = &d * &theta_true;
        let lsq = LeastSquares::new(&d);
        assert!(!lsq.rank_deficient);
        let theta = lsq.solve(&x);
        assert_relative_eq!(theta[(0, 0)], 0.5, max_relative = 1e-12);
        assert_relative_eq!(theta[(1, 0)], -2.0, max_relative = 1e-12);
    }

    #[test]
    fn least_squares_residual_is_orthogonal_to_design() {
        let d = DMatrix::from_row_slice(5, 2, &[1.0, -1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 4.0]);
        let x = DMatrix::from_row_slice(5, 2, &[1.0, 0.2, -1.0, 3.4, 2.5, -0.7, 0.0, 1.1, 4.0, 0.0]);
        let lsq = LeastSquares::new(&d);
        let theta = lsq.solve(&x);
        let resid = &x - &d * &theta;
        let dt_e = d.transpose() * resid;
        assert!(dt_e.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn deficient_design_uses_minimum_norm_solution() {
        // Second column duplicates the first, so rank is 1.
        let d = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let x = DMatrix::from_row_slice(3, 1, &[2.0, 4.0, 6.0]);
        let lsq = LeastSquares::new(&d);
        assert!(lsq.rank_deficient);
        assert_eq!(lsq.rank, 1);
        let theta = lsq.solve(&x);
        // Minimum-norm split: both coefficients 1.
        assert_relative_eq!(theta[(0, 0)], 1.0, max_relative = 1e-10);
        assert_relative_eq!(theta[(1, 0)], 1.0, max_relative = 1e-10);
    }

    #[test]
    fn thin_svd_factors_an_exactly_rank_two_matrix() {
        // Sampled sinusoids span a two-dimensional space, so this 4x3
        // matrix is exactly rank 2. The bidiagonal SVD this replaced
        // missed the reconstruction by 0.13 on these values.
        let x = DMatrix::from_fn(4, 3, |r, c| {
            (((r * 3 + c) as f64 * 0.911 + 46.0) * 1.618).sin() * 3.0
        });
        let svd = thin_svd(&x);
        assert_eq!(svd.rank(), 2);
        let rebuilt = &svd.u * DMatrix::from_diagonal(&svd.sigma) * svd.v.transpose();
        let worst = (&rebuilt - &x).iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        assert!(worst < 1e-10, "reconstruction off by {worst}");
        let energy: f64 = svd.sigma.iter().map(|s| s * s).sum();
        assert_relative_eq!(energy, frob_sq(&x), max_relative = 1e-10);
    }

    #[test]
    fn thin_svd_handles_both_orientations() {
        for (n, m) in [(5usize, 3usize), (3, 5)] {
            let x = DMatrix::from_fn(n, m, |r, c| {
                ((r * m + c + 1) as f64 * 12.9898).sin().fract() * 43758.5453 % 7.0
            });
            let svd = thin_svd(&x);
            let k = n.min(m);
            assert_eq!(svd.u.ncols(), k);
            assert_eq!(svd.v.ncols(), k);
            let rebuilt = &svd.u * DMatrix::from_diagonal(&svd.sigma) * svd.v.transpose();
            let scale = svd.sigma.max().max(1.0);
            for (a, b) in rebuilt.iter().zip(x.iter()) {
                assert!((a - b).abs() < 1e-9 * scale);
            }
            // Both factors orthonormal at full rank.
            for (side, cols) in [(&svd.u, k), (&svd.v, k)] {
                let gram = side.transpose() * side;
                for i in 0..cols {
                    for j in 0..cols {
                        let want = if i == j { 1.0 } else { 0.0 };
                        assert!((gram[(i, j)] - want).abs() < 1e-9);
                    }
                }
            }
            for i in 1..k {
                assert!(svd.sigma[i] <= svd.sigma[i - 1]);
            }
        }
    }
}
