//! Artifact rendering: the CSV and plain-text files a run writes. Floats
//! go out in shortest round-trip form so a reader recovers the exact
//! values; every byte here is a pure function of the run inputs.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use asca_core::diagnostics::BoxSummary;
use asca_core::inference::PermutationResult;
use asca_core::preprocess::ExclusionReport;
use asca_core::sca::ScaView;
use nalgebra::DVector;

/// Filesystem-safe stem for a term name: the interaction sign and
/// nesting parentheses become plain ASCII.
pub fn term_stem(term: &str) -> String {
    term.chars()
        .map(|c| match c {
            '\u{d7}' => 'x',
            '(' | ')' => '.',
            '/' | '\\' | ' ' => '_',
            c => c,
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Augmented and effect-level scores per row, one column pair per kept
/// component.
pub fn scores_csv(view: &ScaView, row_labels: &[String]) -> String {
    let r = view.components();
    let mut out = String::from("row,label");
    for k in 1..=r {
        out.push_str(&format!(",pc{k}_augmented,pc{k}_effect"));
    }
    out.push('\n');
    let aug = view.scores_augmented.as_ref();
    for i in 0..view.scores_effect.nrows() {
        out.push_str(&format!("{},{}", i, csv_field(&row_labels[i])));
        for k in 0..r {
            let a = aug.map_or(f64::NAN, |m| m[(i, k)]);
            out.push_str(&format!(",{},{}", a, view.scores_effect[(i, k)]));
        }
        out.push('\n');
    }
    out
}

/// Loadings per variable plus the per-component singular value and
/// explained fraction repeated in a two-row header block.
pub fn loadings_csv(view: &ScaView, col_labels: &[String]) -> String {
    let r = view.components();
    let mut out = String::from("column,label");
    for k in 1..=r {
        out.push_str(&format!(",pc{k}"));
    }
    out.push('\n');
    out.push_str("sigma,");
    for k in 0..r {
        out.push_str(&format!(",{}", view.singular_values[k]));
    }
    out.push('\n');
    out.push_str("explained_fraction,");
    for k in 0..r {
        out.push_str(&format!(",{}", view.explained_fraction[k]));
    }
    out.push('\n');
    for j in 0..view.loadings.nrows() {
        out.push_str(&format!("{},{}", j, csv_field(&col_labels[j])));
        for k in 0..r {
            out.push_str(&format!(",{}", view.loadings[(j, k)]));
        }
        out.push('\n');
    }
    out
}

/// The full null distribution of one term, one F ratio per permutation.
pub fn null_csv(result: &PermutationResult) -> String {
    let mut out = String::from("iteration,f_null\n");
    for (i, f) in result.f_null.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, f));
    }
    out
}

/// Per-row Q and D statistics with the shared control limits on every
/// line, so the file stands alone.
pub fn mspc_csv(
    q: &DVector<f64>,
    d: &DVector<f64>,
    q_limit: f64,
    d_limit: f64,
    row_labels: &[String],
) -> String {
    let mut out = String::from("row,label,q,d,q_limit,d_limit\n");
    for i in 0..q.len() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i,
            csv_field(&row_labels[i]),
            q[i],
            d[i],
            q_limit,
            d_limit
        ));
    }
    out
}

pub fn acf_csv(acf: &[f64]) -> String {
    let mut out = String::from("lag,r\n");
    for (lag, r) in acf.iter().enumerate() {
        out.push_str(&format!("{lag},{r}\n"));
    }
    out
}

/// Tukey box summaries per factor level; outliers are `;`-joined inside
/// one field.
pub fn dispersion_csv(summaries: &[BoxSummary], level_labels: &[String]) -> String {
    let mut out =
        String::from("level,label,n,median,q1,q3,whisker_low,whisker_high,outliers\n");
    for s in summaries {
        let outliers = s
            .outliers
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            s.level,
            csv_field(&level_labels[s.level]),
            s.n,
            s.median,
            s.q1,
            s.q3,
            s.whisker_low,
            s.whisker_high,
            csv_field(&outliers)
        ));
    }
    out
}

/// What happened to the data before fitting: parse skips, leap-day
/// drops, row exclusion, imputation, scaling.
pub struct PreprocessingLog<'a> {
    pub records: usize,
    pub blank_values: usize,
    pub leap_records_dropped: usize,
    pub exclusion: Option<&'a ExclusionReport>,
    pub cells_imputed: usize,
    pub preprocessing: &'a str,
    /// Column indices autoscaling left centered-only for lack of variance.
    pub flat_columns: &'a [usize],
}

pub fn preprocessing_txt(log: &PreprocessingLog<'_>) -> String {
    let mut out = String::new();
    out.push_str(&format!("records read: {}\n", log.records));
    out.push_str(&format!("blank values skipped: {}\n", log.blank_values));
    out.push_str(&format!(
        "leap-day records dropped: {}\n",
        log.leap_records_dropped
    ));
    match log.exclusion {
        None => out.push_str("row exclusion: off\n"),
        Some(r) => {
            out.push_str(&format!(
                "row exclusion: threshold {} missing, {} rows dropped, {} kept\n",
                r.threshold,
                r.dropped.len(),
                r.kept
            ));
            for (idx, label, missing) in &r.dropped {
                out.push_str(&format!(
                    "  dropped row {idx} ({label}): {missing} missing\n"
                ));
            }
        }
    }
    out.push_str(&format!("cells imputed with column means: {}\n", log.cells_imputed));
    out.push_str(&format!("preprocessing: {}\n", log.preprocessing));
    if log.preprocessing == "autoscale" && !log.flat_columns.is_empty() {
        out.push_str(&format!(
            "warning: {} zero-variance columns were centered but not scaled: {}\n",
            log.flat_columns.len(),
            log.flat_columns
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }
    out
}

/// Everything the manifest records. Deliberately free of paths and
/// timestamps: two runs of the same config on the same input must
/// produce identical bytes.
pub struct Manifest<'a> {
    pub version: &'a str,
    pub config_sha256: String,
    pub input_sha256: String,
    pub seed: u64,
    pub permutations: usize,
    pub rng: &'static str,
    pub preprocessing: &'a str,
    pub reference: &'a str,
    pub tensor_shape: String,
    pub n_rows: usize,
    pub n_cols: usize,
    /// (term, df, sigma list, explained fractions) per effect term.
    pub terms: Vec<(String, usize, Vec<f64>, Vec<f64>)>,
    pub control_percentile: f64,
    pub q_limit: f64,
    pub d_limit: f64,
    pub acf_lags: Option<usize>,
    pub artifacts: Vec<String>,
}

pub fn manifest_txt(m: &Manifest<'_>) -> String {
    let mut out = String::new();
    out.push_str(&format!("tool: asca {}\n", m.version));
    out.push_str(&format!("config_sha256: {}\n", m.config_sha256));
    out.push_str(&format!("input_sha256: {}\n", m.input_sha256));
    out.push_str(&format!("seed: {}\n", m.seed));
    out.push_str(&format!("permutations: {}\n", m.permutations));
    out.push_str(&format!("rng: {}\n", m.rng));
    out.push_str(&format!("preprocessing: {}\n", m.preprocessing));
    out.push_str(&format!("reference: {}\n", m.reference));
    out.push_str(&format!("tensor: {}\n", m.tensor_shape));
    out.push_str(&format!("table: {} rows x {} columns\n", m.n_rows, m.n_cols));
    for (term, df, sigma, explained) in &m.terms {
        let sig = sigma.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
        let exp = explained
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str(&format!(
            "term: {term} df={df} sigma=[{sig}] explained=[{exp}]\n"
        ));
    }
    out.push_str(&format!(
        "mspc: percentile {} q_limit={} d_limit={}\n",
        m.control_percentile, m.q_limit, m.d_limit
    ));
    match m.acf_lags {
        Some(l) => out.push_str(&format!("acf: lags 0..={l}\n")),
        None => out.push_str("acf: skipped (constant q series)\n"),
    }
    out.push_str(&format!("artifacts: {}\n", m.artifacts.join(", ")));
    out
}

/// Write every artifact, or none. Directories are created as needed; on
/// the first failed write all files already written are removed so a
/// botched run leaves no partial output behind.
pub fn write_artifacts(
    out_dir: &Path,
    files: &[(String, Vec<u8>)],
) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    if files.iter().any(|(name, _)| name.starts_with("plots/")) {
        fs::create_dir_all(out_dir.join("plots"))?;
    }
    let mut written: Vec<PathBuf> = Vec::new();
    for (name, bytes) in files {
        let path = out_dir.join(name);
        match fs::write(&path, bytes) {
            Ok(()) => written.push(path),
            Err(e) => {
                for w in &written {
                    let _ = fs::remove_file(w);
                }
                return Err(e);
            }
        }
    }
    Ok(written)
}
