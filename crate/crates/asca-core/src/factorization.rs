//! Least-squares decomposition of a data matrix into per-term effect
//! matrices, and the ANOVA table on top of it.
//!
//! The model is X = D Theta + E with D the assembled design. Coefficients
//! come from the economy QR of D (minimum-norm SVD solution when D is
//! rank deficient, reported through a flag rather than an error, since
//! unbalanced data with empty cells legitimately produces such designs).
//! The effect matrix of a term is its design block times its coefficient
//! rows, so grand mean + effects + residuals rebuild X by construction.
//!
//! Sums of squares are squared Frobenius norms accumulated through
//! [`linalg::row_sq_norms`], which pins the summation order: the identical
//! expression is evaluated for observed and permuted data, so tied
//! F statistics agree bitwise.

use crate::design::DesignMatrix;
use crate::error::AscaError;
use crate::linalg::{col_means, frob_sq, row_sq_norms, LeastSquares};
use crate::Result;
use nalgebra::{DMatrix, DVector};

/// Result of fitting the linear model: one matrix per effect term plus
/// what is left over.
#[derive(Debug, Clone)]
pub struct EffectDecomposition {
    /// Intercept coefficients, one per column of X.
    pub grand_mean: DVector<f64>,
    /// Effect matrices in term order, each the size of X.
    pub effects: Vec<(String, DMatrix<f64>)>,
    pub residuals: DMatrix<f64>,
    /// Full coefficient matrix Theta, design columns by data columns.
    pub coefficients: DMatrix<f64>,
    /// Squared Frobenius norm of X after column centering; the
    /// denominator of every %SS figure.
    pub ss_total: f64,
    /// Set when the design needed the minimum-norm fallback.
    pub rank_deficient: bool,
    n_rows: usize,
}

impl EffectDecomposition {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn effect(&self, term: &str) -> Result<&DMatrix<f64>> {
        self.effects
            .iter()
            .find(|(name, _)| name == term)
            .map(|(_, m)| m)
            .ok_or_else(|| AscaError::UnknownTerm(term.to_string()))
    }
}

/// Per-term and residual sums of squares for one right-hand side, the
/// inner kernel shared by the table builder and the permutation loop.
pub(crate) struct SsBreakdown {
    pub terms: Vec<f64>,
    pub residual: f64,
}

pub(crate) fn sums_of_squares(
    lsq: &LeastSquares,
    d: &DesignMatrix,
    x: &DMatrix<f64>,
) -> SsBreakdown {
    let theta = lsq.solve(x);
    let terms = d
        .effect_terms()
        .iter()
        .map(|t| frob_sq(&(d.block(t) * theta.rows(t.start, t.len))))
        .collect();
    let residual = frob_sq(&(x - &d.matrix * &theta));
    SsBreakdown { terms, residual }
}

fn check_input(x: &DMatrix<f64>, d: &DesignMatrix) -> Result<()> {
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
    Ok(())
}

/// Fit X = D Theta + E by least squares and split the fitted part into
/// per-term effect matrices.
pub fn fit(x: &DMatrix<f64>, d: &DesignMatrix) -> Result<EffectDecomposition> {
    check_input(x, d)?;
    let lsq = LeastSquares::new(&d.matrix);
    let theta = lsq.solve(x);

    let effects: Vec<(String, DMatrix<f64>)> = d
        .effect_terms()
        .iter()
        .map(|t| (t.name.clone(), d.block(t) * theta.rows(t.start, t.len)))
        .collect();
    let residuals = x - &d.matrix * &theta;
    let grand_mean = theta.row(0).transpose();

    let means = col_means(x);
    let mut centered = x.clone();
    for (mut col, m) in centered.column_iter_mut().zip(means.iter()) {
        col.add_scalar_mut(-m);
    }
    let ss_total = frob_sq(&centered);

    Ok(EffectDecomposition {
        grand_mean,
        effects,
        residuals,
        coefficients: theta,
        ss_total,
        rank_deficient: lsq.rank_deficient,
        n_rows: x.nrows(),
    })
}

/// One line of the ANOVA table.
#[derive(Debug, Clone)]
pub struct AnovaRow {
    pub term: String,
    pub ss: f64,
    pub pct_ss: f64,
    pub df: usize,
    pub ms: f64,
    pub f: Option<f64>,
    pub p: Option<f64>,
}

/// Effect rows in term order, then residuals, then the total. The %SS
/// column divides by the centered total, so an unbalanced design can sum
/// past 100: partial overlap between non-orthogonal effects is counted
/// in each term it touches.
#[derive(Debug, Clone)]
pub struct AnovaTable {
    pub rows: Vec<AnovaRow>,
    pub residual: AnovaRow,
    pub total: AnovaRow,
    /// What the F denominators are: "residuals" or a term name.
    pub reference: String,
    /// Residual mean square was zero, so F ratios are infinite.
    pub zero_residual_variance: bool,
    /// The centered total was zero (constant data); %SS and F are NaN.
    pub zero_total_variance: bool,
}

impl AnovaTable {
    /// All rows in display order.
    pub fn all_rows(&self) -> impl Iterator<Item = &AnovaRow> {
        self.rows
            .iter()
            .chain(std::iter::once(&self.residual))
            .chain(std::iter::once(&self.total))
    }

    pub fn row(&self, term: &str) -> Result<&AnovaRow> {
        self.rows
            .iter()
            .find(|r| r.term == term)
            .ok_or_else(|| AscaError::UnknownTerm(term.to_string()))
    }

    /// Attach a permutation p-value to a term.
    pub fn set_p(&mut self, term: &str, p: f64) -> Result<()> {
        let row = self
            .rows
            .iter_mut()
            .find(|r| r.term == term)
            .ok_or_else(|| AscaError::UnknownTerm(term.to_string()))?;
        row.p = Some(p);
        Ok(())
    }

    /// Delimiter-separated form. Floats print in shortest-roundtrip form,
    /// so parsing the text recovers the exact values.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("term,SS,pct_SS,df,MS,F,p\n");
        for r in self.all_rows() {
            let f = r.f.map(|v| v.to_string()).unwrap_or_default();
            let p = r.p.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                csv_field(&r.term),
                r.ss,
                r.pct_ss,
                r.df,
                r.ms,
                f,
                p
            ));
        }
        out
    }

    /// Aligned plain-text form for reading at the terminal.
    pub fn to_text(&self) -> String {
        let headers = ["term", "SS", "%SS", "df", "MS", "F", "p"];
        let mut cells: Vec<[String; 7]> = Vec::new();
        for r in self.all_rows() {
            cells.push([
                r.term.clone(),
                fmt_sig(r.ss, 6),
                fmt_sig(r.pct_ss, 6),
                r.df.to_string(),
                fmt_sig(r.ms, 6),
                r.f.map(|v| fmt_sig(v, 6)).unwrap_or_else(|| "--".into()),
                r.p.map(|v| fmt_sig(v, 6)).unwrap_or_else(|| "--".into()),
            ]);
        }
        let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row.iter()) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        for (i, h) in headers.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            if i == 0 {
                out.push_str(&format!("{:<w$}", h, w = widths[i]));
            } else {
                out.push_str(&format!("{:>w$}", h, w = widths[i]));
            }
        }
        out.push('\n');
        for row in &cells {
            for (i, c) in row.iter().enumerate() {
                if i > 0 {
                    out.push_str("  ");
                }
                if i == 0 {
                    out.push_str(&format!("{:<w$}", c, w = widths[i]));
                } else {
                    out.push_str(&format!("{:>w$}", c, w = widths[i]));
                }
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Format with `sig` significant digits, plain notation in a sane range
/// and scientific outside it.
pub fn fmt_sig(v: f64, sig: usize) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-4..6).contains(&exp) {
        format!("{:.*e}", sig.saturating_sub(1), v)
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        format!("{:.*}", decimals, v)
    }
}

/// Build the ANOVA table for a fitted decomposition. `reference` picks
/// the F denominator: `None` for the residual mean square, or the name of
/// a term to test against (that term then gets no F of its own).
pub fn anova_table(
    dec: &EffectDecomposition,
    d: &DesignMatrix,
    reference: Option<&str>,
) -> Result<AnovaTable> {
    let n = dec.n_rows;
    let p: usize = d.terms.iter().map(|t| t.len).sum();
    if n <= p {
        return Err(AscaError::NoResidualDf);
    }
    let resid_df = n - p;

    if let Some(name) = reference {
        // Must be an effect term.
        if !d.effect_terms().iter().any(|t| t.name == name) {
            return Err(AscaError::UnknownTerm(name.to_string()));
        }
    }

    let ss_res: f64 = row_sq_norms(&dec.residuals).iter().sum();
    let ms_res = ss_res / resid_df as f64;
    let ss_total = dec.ss_total;
    let zero_total_variance = ss_total == 0.0;
    let pct = |ss: f64| {
        if zero_total_variance {
            f64::NAN
        } else {
            ss / ss_total * 100.0
        }
    };

    struct TermStat {
        name: String,
        ss: f64,
        df: usize,
        ms: f64,
    }
    let mut stats = Vec::new();
    for t in d.effect_terms() {
        let effect = dec.effect(&t.name)?;
        let ss = frob_sq(effect);
        let df = t.df();
        stats.push(TermStat {
            name: t.name.clone(),
            ss,
            df,
            ms: ss / df as f64,
        });
    }

    let (ref_name, ss_ref, ms_ref) = match reference {
        None => ("residuals".to_string(), ss_res, ms_res),
        Some(name) => {
            let s = stats.iter().find(|s| s.name == name).expect("checked above");
            (name.to_string(), s.ss, s.ms)
        }
    };
    // A reference variance at roundoff level relative to the data means
    // the denominator carries no information; reporting a finite F there
    // would be noise over noise.
    let zero_residual_variance = ss_ref <= ss_total * f64::EPSILON * n as f64;

    let mut rows = Vec::new();
    let mut pct_sum = 0.0;
    for s in &stats {
        let f = if s.name == ref_name {
            None
        } else if zero_residual_variance {
            Some(if s.ms > 0.0 { f64::INFINITY } else { f64::NAN })
        } else {
            Some(s.ms / ms_ref)
        };
        pct_sum += pct(s.ss);
        rows.push(AnovaRow {
            term: s.name.clone(),
            ss: s.ss,
            pct_ss: pct(s.ss),
            df: s.df,
            ms: s.ms,
            f,
            p: None,
        });
    }
    let residual = AnovaRow {
        term: "residuals".to_string(),
        ss: ss_res,
        pct_ss: pct(ss_res),
        df: resid_df,
        ms: ms_res,
        f: None,
        p: None,
    };
    pct_sum += pct(ss_res);
    let total = AnovaRow {
        term: "total".to_string(),
        ss: ss_total,
        pct_ss: pct_sum,
        df: n - 1,
        ms: ss_total / (n - 1) as f64,
        f: None,
        p: None,
    };
    Ok(AnovaTable {
        rows,
        residual,
        total,
        reference: ref_name,
        zero_residual_variance,
        zero_total_variance,
    })
}

/// Run the whole pipeline on a single response column: fit, table,
/// permutation p-values. Identical to the multivariate path with a
/// one-column matrix.
pub fn univariate_anova(
    x: &DVector<f64>,
    d: &DesignMatrix,
    k: usize,
    seed: u64,
) -> Result<(AnovaTable, Vec<crate::inference::PermutationResult>)> {
    let xm = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
    let dec = fit(&xm, d)?;
    let mut table = anova_table(&dec, d, None)?;
    let terms: Vec<String> = d.effect_terms().iter().map(|t| t.name.clone()).collect();
    let results = crate::inference::permutation_test(&xm, d, &terms, None, k, seed)?;
    for r in &results {
        table.set_p(&r.term, r.p)?;
    }
    Ok((table, results))
}
