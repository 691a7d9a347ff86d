//! Principal component views of fitted effect matrices.
//!
//! Each effect matrix gets its own truncated SVD: loadings are right
//! singular vectors, effect scores are left singular vectors scaled by
//! the singular values, and residuals can be projected onto the same
//! loadings to show observation-level scatter around the level means
//! ("augmented" scores). Signs are pinned by making the largest-magnitude
//! entry of every loading positive, so two runs of the same data can
//! never disagree by a flipped axis.

use crate::error::AscaError;
use crate::linalg::{frob_sq, thin_svd};
use crate::Result;
use nalgebra::{DMatrix, DVector};

/// Principal component view of one effect matrix.
#[derive(Debug, Clone)]
pub struct ScaView {
    pub term: String,
    /// Columns are orthonormal loading vectors, variables by components.
    pub loadings: DMatrix<f64>,
    /// Singular values, descending.
    pub singular_values: DVector<f64>,
    /// Effect-level scores U * Sigma, observations by components.
    pub scores_effect: DMatrix<f64>,
    /// Scores of effect + residuals on the same loadings, once
    /// [`augment_scores`] has run.
    pub scores_augmented: Option<DMatrix<f64>>,
    /// Share of the effect's total sum of squares captured per component.
    pub explained_fraction: Vec<f64>,
    /// Total sum of squares of the effect matrix, i.e. the sum of all
    /// squared singular values, not just the kept ones.
    pub total_ss: f64,
    /// The effect matrix was identically zero; the view is empty.
    pub degenerate: bool,
}

impl ScaView {
    pub fn components(&self) -> usize {
        self.singular_values.len()
    }
}

/// Truncated SVD of an effect matrix, keeping up to `r` components. A
/// request past the matrix's numerical rank is trimmed to the rank:
/// directions the effect does not span would be pure noise. A zero
/// matrix yields an empty view with the `degenerate` flag set.
pub fn pca_effect(effect: &DMatrix<f64>, term: &str, r: usize) -> Result<ScaView> {
    if effect.iter().any(|v| !v.is_finite()) {
        return Err(AscaError::NonFiniteInput);
    }
    let (n, m) = effect.shape();
    let max_r = n.min(m);
    if r > max_r {
        return Err(AscaError::TooManyComponents {
            requested: r,
            max: max_r,
        });
    }
    let total_ss = frob_sq(effect);
    if total_ss == 0.0 {
        return Ok(ScaView {
            term: term.to_string(),
            loadings: DMatrix::zeros(m, 0),
            singular_values: DVector::zeros(0),
            scores_effect: DMatrix::zeros(n, 0),
            scores_augmented: None,
            explained_fraction: Vec::new(),
            total_ss,
            degenerate: true,
        });
    }

    let svd = thin_svd(effect);
    let keep = r.min(svd.rank());

    let mut loadings = DMatrix::zeros(m, keep);
    let mut sigma = DVector::zeros(keep);
    let mut explained = Vec::with_capacity(keep);
    for out in 0..keep {
        let s = svd.sigma[out];
        sigma[out] = s;
        explained.push(s * s / total_ss);
        let mut load: DVector<f64> = svd.v.column(out).into();
        // Sign convention: the largest-magnitude loading entry is
        // positive; first index wins ties.
        let mut pivot = 0usize;
        for (i, v) in load.iter().enumerate() {
            if v.abs() > load[pivot].abs() {
                pivot = i;
            }
        }
        if load[pivot] < 0.0 {
            load.neg_mut();
        }
        loadings.set_column(out, &load);
    }
    // Scores are the data's projection onto the loadings; this keeps
    // scores and loadings consistent by definition, sign flips included.
    let scores = effect * &loadings;

    Ok(ScaView {
        term: term.to_string(),
        loadings,
        singular_values: sigma,
        scores_effect: scores,
        scores_augmented: None,
        explained_fraction: explained,
        total_ss,
        degenerate: false,
    })
}

/// Project residual scatter onto the view's loadings: augmented scores
/// are effect scores plus residuals * loadings, i.e. the projection of
/// (effect + residuals). Augmenting with a zero matrix reproduces the
/// effect scores.
pub fn augment_scores(view: &mut ScaView, residuals: &DMatrix<f64>) -> Result<()> {
    if residuals.nrows() != view.scores_effect.nrows()
        || residuals.ncols() != view.loadings.nrows()
    {
        return Err(AscaError::ShapeMismatch(format!(
            "residuals are {}x{} but the view needs {}x{}",
            residuals.nrows(),
            residuals.ncols(),
            view.scores_effect.nrows(),
            view.loadings.nrows()
        )));
    }
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(AscaError::NonFiniteInput);
    }
    view.scores_augmented = Some(&view.scores_effect + residuals * &view.loadings);
    Ok(())
}

/// One labeled point of a biplot.
#[derive(Debug, Clone)]
pub struct BiplotPoint {
    pub label: String,
    pub x: f64,
    pub y: f64,
}

/// Joint score/loading display for one pair of components. Loadings are
/// rescaled by `scale` so both clouds share the plot range.
#[derive(Debug, Clone)]
pub struct BiplotCoords {
    pub pc_x: usize,
    pub pc_y: usize,
    pub scores: Vec<BiplotPoint>,
    pub loadings: Vec<BiplotPoint>,
    /// max |score| / max |loading| over the two axes.
    pub scale: f64,
}

/// Build biplot coordinates for components `pc_x` and `pc_y` (0-based).
/// Rows sharing a `row_groups` label are averaged into one score point,
/// in first-appearance order; pass distinct labels to keep every row.
/// Augmented scores are used when present. A one-component view accepts
/// `pc_y = 1` as a synthetic zero axis.
pub fn biplot_coords(
    view: &ScaView,
    pc_x: usize,
    pc_y: usize,
    row_groups: &[String],
    col_labels: &[String],
) -> Result<BiplotCoords> {
    let fitted = view.components();
    let axis_ok = |pc: usize| pc < fitted || (fitted == 1 && pc == 1);
    for pc in [pc_x, pc_y] {
        if !axis_ok(pc) {
            return Err(AscaError::ComponentOutOfRange { index: pc, fitted });
        }
    }
    let scores = view.scores_augmented.as_ref().unwrap_or(&view.scores_effect);
    if row_groups.len() != scores.nrows() {
        return Err(AscaError::ShapeMismatch(format!(
            "{} group labels for {} score rows",
            row_groups.len(),
            scores.nrows()
        )));
    }
    if col_labels.len() != view.loadings.nrows() {
        return Err(AscaError::ShapeMismatch(format!(
            "{} column labels for {} variables",
            col_labels.len(),
            view.loadings.nrows()
        )));
    }

    let axis_score = |row: usize, pc: usize| if pc < fitted { scores[(row, pc)] } else { 0.0 };
    let axis_load = |var: usize, pc: usize| {
        if pc < fitted {
            view.loadings[(var, pc)]
        } else {
            0.0
        }
    };

    // Average rows per group, first appearance fixes the order.
    let mut group_order: Vec<&String> = Vec::new();
    let mut sums: Vec<(f64, f64, usize)> = Vec::new();
    for row in 0..scores.nrows() {
        let label = &row_groups[row];
        let slot = match group_order.iter().position(|g| *g == label) {
            Some(i) => i,
            None => {
                group_order.push(label);
                sums.push((0.0, 0.0, 0));
                sums.len() - 1
            }
        };
        sums[slot].0 += axis_score(row, pc_x);
        sums[slot].1 += axis_score(row, pc_y);
        sums[slot].2 += 1;
    }
    let score_points: Vec<BiplotPoint> = group_order
        .iter()
        .zip(&sums)
        .map(|(label, &(sx, sy, n))| BiplotPoint {
            label: (*label).clone(),
            x: sx / n as f64,
            y: sy / n as f64,
        })
        .collect();

    let max_score = score_points
        .iter()
        .flat_map(|p| [p.x.abs(), p.y.abs()])
        .fold(0.0f64, f64::max);
    let max_load = (0..view.loadings.nrows())
        .flat_map(|v| [axis_load(v, pc_x).abs(), axis_load(v, pc_y).abs()])
        .fold(0.0f64, f64::max);
    let scale = if max_score > 0.0 && max_load > 0.0 {
        max_score / max_load
    } else {
        1.0
    };

    let loading_points: Vec<BiplotPoint> = col_labels
        .iter()
        .enumerate()
        .map(|(v, label)| BiplotPoint {
            label: label.clone(),
            x: axis_load(v, pc_x) * scale,
            y: axis_load(v, pc_y) * scale,
        })
        .collect();

    Ok(BiplotCoords {
        pc_x,
        pc_y,
        scores: score_points,
        loadings: loading_points,
        scale,
    })
}
