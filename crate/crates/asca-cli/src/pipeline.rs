//! The end-to-end run: records to artifact directory. Orchestration is
//! single-threaded; only the permutation loop inside the core may fan
//! out, and its output does not depend on worker count, so a run is a
//! pure function of (config bytes, input bytes).

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use asca_core::design::{assemble_design, DesignMatrix, FactorKind, FactorSpec};
use asca_core::diagnostics::{
    control_limit, d_statistic, q_statistic, residual_dispersion, sample_acf, BoxSummary,
};
use asca_core::factorization::{anova_table, fit, AnovaTable, EffectDecomposition};
use asca_core::inference::{permutation_test, PermutationResult};
use asca_core::io::read_records;
use asca_core::preprocess::{
    autoscale, drop_rows_by_missing, impute_column_mean, mean_center, ExclusionReport,
};
use asca_core::sca::{augment_scores, biplot_coords, pca_effect, ScaView};
use asca_core::tensor::{
    aggregate_mode, build_tensor, unfold, Calendar, CalendarModeSpec, DesignTable,
};
use asca_core::{AscaError, Result};

use crate::config::{normalize_term, parse_time_unit, ModeDecl, PipelineConfig};
use crate::report::{self, Manifest, PreprocessingLog};
use crate::svg;

/// Identifies the shuffle stream: ChaCha8 keyed by the seed, spent on
/// rejection-sampled Fisher-Yates draws.
const RNG_CONTRACT: &str = "chacha8-fisher-yates";

/// What a finished run leaves behind, plus the fitted table for callers
/// that want to inspect it without re-parsing the CSV.
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub table: AnovaTable,
    pub n_rows: usize,
    pub n_cols: usize,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn bad_config(msg: String) -> AscaError {
    AscaError::ShapeMismatch(msg)
}

fn mode_spec(decl: &ModeDecl) -> Result<CalendarModeSpec> {
    let unit = |s: &Option<String>, what: &str| -> Result<_> {
        s.as_deref()
            .and_then(parse_time_unit)
            .ok_or_else(|| bad_config(format!("mode '{}' needs a valid {what}", decl.name)))
    };
    match decl.kind.as_str() {
        "cyclostationary" => CalendarModeSpec::cyclostationary(
            &decl.name,
            unit(&decl.frequency, "frequency")?,
            unit(&decl.period, "period")?,
        ),
        "evolution" => match decl.years {
            Some(years) => Ok(CalendarModeSpec::evolution_years(
                &decl.name,
                years,
                decl.base_year,
            )),
            None => CalendarModeSpec::evolution_cycle(
                &decl.name,
                unit(&decl.frequency, "frequency")?,
                unit(&decl.period, "period")?,
            ),
        },
        "series" => Ok(CalendarModeSpec::non_temporal(
            &decl.name,
            decl.levels.clone().unwrap_or_default(),
        )),
        other => Err(bad_config(format!("unknown mode kind '{other}'"))),
    }
}

/// The mode names belonging to a term: interaction members split on the
/// product sign, a nested factor reduced to its own mode.
fn term_modes(term: &str) -> Vec<&str> {
    term.split('\u{d7}')
        .map(|part| part.split('(').next().unwrap_or(part))
        .collect()
}

/// Per-row display label for one term: the level labels of its modes.
fn term_row_groups(term: &str, table: &DesignTable) -> Result<Vec<String>> {
    let modes = term_modes(term);
    let mut parts: Vec<(usize, &CalendarModeSpec)> = Vec::new();
    for name in modes {
        let pos = table
            .row_modes
            .iter()
            .position(|m| m.name == name)
            .ok_or_else(|| AscaError::UnknownMode(name.to_string()))?;
        parts.push((pos, &table.row_modes[pos]));
    }
    Ok((0..table.nrows())
        .map(|r| {
            parts
                .iter()
                .map(|(pos, spec)| spec.level_label(table.row_levels[r][*pos]))
                .collect::<Vec<_>>()
                .join("/")
        })
        .collect())
}

/// Map the configured reference onto the fitted term name, widening a
/// factor mode to its nested form when needed.
fn reference_term(cfg: &PipelineConfig) -> Option<String> {
    let wanted = normalize_term(&cfg.reference);
    if wanted == "residuals" {
        return None;
    }
    for f in &cfg.factors {
        if f.mode == wanted {
            return Some(f.term_name());
        }
    }
    Some(wanted)
}

struct Diagnostics {
    q: DVector<f64>,
    d: DVector<f64>,
    q_limit: f64,
    d_limit: f64,
    acf: Option<Vec<f64>>,
    dispersion: Vec<(String, Vec<BoxSummary>, Vec<String>)>,
}

fn run_diagnostics(
    cfg: &PipelineConfig,
    table: &DesignTable,
    dec: &EffectDecomposition,
) -> Result<Diagnostics> {
    let n = dec.residuals.nrows();
    let m = dec.residuals.ncols();
    let q = q_statistic(&dec.residuals);

    // Model-plane distance: principal components of the summed effect
    // matrices, the fitted part of the data.
    let mut model = DMatrix::zeros(n, m);
    for (_, effect) in &dec.effects {
        model += effect;
    }
    let model_view = pca_effect(&model, "model", cfg.components)?;
    let d = if model_view.degenerate {
        DVector::zeros(n)
    } else {
        d_statistic(&model_view.scores_effect, &model_view.singular_values)?
    };

    let q_limit = control_limit(q.as_slice(), cfg.control_percentile)?;
    let d_limit = control_limit(d.as_slice(), cfg.control_percentile)?;

    let max_lag = cfg.acf_max_lag.min(n.saturating_sub(1));
    let acf = match sample_acf(q.as_slice(), max_lag) {
        Ok(r) => Some(r),
        Err(AscaError::ConstantSeries) => None,
        Err(e) => return Err(e),
    };

    let mut dispersion = Vec::new();
    for f in &cfg.factors {
        let levels = table.factor_levels(&f.mode)?;
        let spec = table
            .row_modes
            .iter()
            .find(|m| m.name == f.mode)
            .ok_or_else(|| AscaError::UnknownMode(f.mode.clone()))?;
        let summaries = residual_dispersion(&dec.residuals, &levels, spec.cardinality)?;
        let labels = (0..spec.cardinality).map(|l| spec.level_label(l)).collect();
        dispersion.push((f.mode.clone(), summaries, labels));
    }

    Ok(Diagnostics { q, d, q_limit, d_limit, acf, dispersion })
}

fn render_plots(
    cfg: &PipelineConfig,
    table: &DesignTable,
    views: &[ScaView],
    diag: &Diagnostics,
    files: &mut Vec<(String, Vec<u8>)>,
) -> Result<()> {
    let col_labels: Vec<String> = (0..table.ncols()).map(|c| table.col_label(c)).collect();
    for view in views {
        let stem = report::term_stem(&view.term);
        if view.components() == 0 {
            let empty = svg::empty_plot(&format!("scores: {}", view.term));
            files.push((format!("plots/scores_{stem}.svg"), empty.into_bytes()));
            continue;
        }
        let groups = term_row_groups(&view.term, table)?;
        let scores = view.scores_augmented.as_ref().unwrap_or(&view.scores_effect);
        // Points grouped by level label, second axis zero when only one
        // component was kept.
        let mut grouped: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
        for (i, g) in groups.iter().enumerate() {
            let y = if view.components() > 1 { scores[(i, 1)] } else { 0.0 };
            let point = (scores[(i, 0)], y);
            match grouped.iter_mut().find(|(label, _)| label == g) {
                Some((_, pts)) => pts.push(point),
                None => grouped.push((g.clone(), vec![point])),
            }
        }
        let pct = |k: usize| view.explained_fraction.get(k).copied().unwrap_or(0.0) * 100.0;
        let xlabel = format!("pc1 ({}%)", asca_core::factorization::fmt_sig(pct(0), 3));
        let ylabel = if view.components() > 1 {
            format!("pc2 ({}%)", asca_core::factorization::fmt_sig(pct(1), 3))
        } else {
            "pc2 (none)".to_string()
        };
        let svg_scores = svg::scatter(&format!("scores: {}", view.term), &xlabel, &ylabel, &grouped);
        files.push((format!("plots/scores_{stem}.svg"), svg_scores.into_bytes()));

        let comps: Vec<Vec<f64>> = (0..view.components())
            .map(|k| view.loadings.column(k).iter().copied().collect())
            .collect();
        let svg_loadings = svg::loading_lines(
            &format!("loadings: {}", view.term),
            &comps,
            &view.explained_fraction,
        );
        files.push((format!("plots/loadings_{stem}.svg"), svg_loadings.into_bytes()));

        let coords = biplot_coords(view, 0, 1, &groups, &col_labels)?;
        let svg_biplot = svg::biplot(&format!("biplot: {}", view.term), &coords);
        files.push((format!("plots/biplot_{stem}.svg"), svg_biplot.into_bytes()));
    }

    let mspc = svg::mspc_plot(
        diag.q.as_slice(),
        diag.d.as_slice(),
        diag.q_limit,
        diag.d_limit,
        cfg.control_percentile,
    );
    files.push(("plots/mspc.svg".to_string(), mspc.into_bytes()));

    if let Some(acf) = &diag.acf {
        let stem_plot = svg::acf_stem(acf, diag.q.len());
        files.push(("plots/acf.svg".to_string(), stem_plot.into_bytes()));
    }

    for (factor, summaries, labels) in &diag.dispersion {
        let plot = svg::box_plot(&format!("residuals by {factor}"), summaries, labels);
        files.push((
            format!("plots/dispersion_{}.svg", report::term_stem(factor)),
            plot.into_bytes(),
        ));
    }
    Ok(())
}

/// Execute a validated config. `out_override` replaces the configured
/// output directory, leaving everything else untouched.
pub fn run(
    cfg: &PipelineConfig,
    cfg_bytes: &[u8],
    out_override: Option<&Path>,
) -> Result<RunOutcome> {
    let out_dir = out_override.unwrap_or(&cfg.output).to_path_buf();

    let input_bytes = std::fs::read(&cfg.input)?;
    let input_sha = sha256_hex(&input_bytes);
    let parsed = read_records(input_bytes.as_slice())?;
    drop(input_bytes);

    let modes: Vec<CalendarModeSpec> =
        cfg.modes.iter().map(mode_spec).collect::<Result<_>>()?;
    let series_mode = cfg
        .modes
        .iter()
        .find(|m| m.kind == "series")
        .map(|m| m.name.clone());
    let calendar = Calendar { year_start_day: cfg.year_start_day };
    let mut tensor = build_tensor(&parsed.records, &modes, series_mode.as_deref(), &calendar)?;

    for agg in &cfg.aggregates {
        tensor = aggregate_mode(&tensor, &agg.mode, agg.block, agg.absorb_remainder)?;
        if let Some(new) = &agg.rename {
            tensor.rename_mode(&agg.mode, new)?;
        }
    }
    let tensor_shape = tensor
        .modes()
        .iter()
        .map(|m| format!("{}={}", m.name, m.cardinality))
        .collect::<Vec<_>>()
        .join(" x ");
    let leap_dropped = tensor.skipped_leap_records;

    let row_names: Vec<&str> = cfg.unfolding.rows.iter().map(String::as_str).collect();
    let col_names: Vec<&str> = cfg.unfolding.columns.iter().map(String::as_str).collect();
    let mut table = unfold(&tensor, &row_names, &col_names)?;

    let exclusion: Option<ExclusionReport> = match cfg.row_exclusion_threshold {
        Some(threshold) => {
            let (kept, rep) = drop_rows_by_missing(&table, threshold)?;
            table = kept;
            Some(rep)
        }
        None => None,
    };
    let imputed = impute_column_mean(&mut table)?;
    let flat_columns = match cfg.preprocessing.as_str() {
        "autoscale" => autoscale(&mut table)?,
        _ => {
            mean_center(&mut table)?;
            Vec::new()
        }
    };

    let mut factors: Vec<FactorSpec> = Vec::new();
    for f in &cfg.factors {
        let levels = table.factor_levels(&f.mode)?;
        let spec = table
            .row_modes
            .iter()
            .find(|m| m.name == f.mode)
            .ok_or_else(|| AscaError::UnknownMode(f.mode.clone()))?;
        let kind = if f.kind == "ordinal" { FactorKind::Ordinal } else { FactorKind::Nominal };
        let mut factor = FactorSpec::new(&f.mode, levels, spec.cardinality, kind);
        if let Some(outer) = &f.nested_in {
            factor = factor.nested(outer);
        }
        factors.push(factor);
    }
    let pairs: Vec<(String, String)> = cfg
        .interactions
        .iter()
        .map(|i| (i.between[0].clone(), i.between[1].clone()))
        .collect();
    let design: DesignMatrix = assemble_design(&factors, &pairs)?;

    let dec = fit(&table.matrix, &design)?;
    let reference = reference_term(cfg);
    let mut anova = anova_table(&dec, &design, reference.as_deref())?;

    let test_terms: Vec<String> = design
        .effect_terms()
        .iter()
        .map(|t| t.name.clone())
        .filter(|t| Some(t.as_str()) != reference.as_deref())
        .collect();
    let perms: Vec<PermutationResult> = if test_terms.is_empty() {
        Vec::new()
    } else {
        permutation_test(
            &table.matrix,
            &design,
            &test_terms,
            reference.as_deref(),
            cfg.permutations,
            cfg.seed,
        )?
    };
    for r in &perms {
        anova.set_p(&r.term, r.p)?;
    }

    let mut views: Vec<ScaView> = Vec::new();
    for t in design.effect_terms() {
        let effect = dec.effect(&t.name)?;
        let mut view = pca_effect(effect, &t.name, cfg.components)?;
        if !view.degenerate {
            augment_scores(&mut view, &dec.residuals)?;
        }
        views.push(view);
    }

    let diag = run_diagnostics(cfg, &table, &dec)?;

    // Every artifact is rendered to bytes before anything touches disk.
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    files.push(("table.csv".to_string(), anova.to_csv().into_bytes()));
    files.push(("table.txt".to_string(), anova.to_text().into_bytes()));

    let row_labels: Vec<String> = (0..table.nrows()).map(|r| table.row_label(r)).collect();
    let col_labels: Vec<String> = (0..table.ncols()).map(|c| table.col_label(c)).collect();
    for view in &views {
        let stem = report::term_stem(&view.term);
        files.push((
            format!("scores_{stem}.csv"),
            report::scores_csv(view, &row_labels).into_bytes(),
        ));
        files.push((
            format!("loadings_{stem}.csv"),
            report::loadings_csv(view, &col_labels).into_bytes(),
        ));
    }
    if cfg.write_null_distributions {
        for r in &perms {
            files.push((
                format!("null_{}.csv", report::term_stem(&r.term)),
                report::null_csv(r).into_bytes(),
            ));
        }
    }
    files.push((
        "mspc.csv".to_string(),
        report::mspc_csv(&diag.q, &diag.d, diag.q_limit, diag.d_limit, &row_labels).into_bytes(),
    ));
    if let Some(acf) = &diag.acf {
        files.push(("acf.csv".to_string(), report::acf_csv(acf).into_bytes()));
    }
    for (factor, summaries, labels) in &diag.dispersion {
        files.push((
            format!("dispersion_{}.csv", report::term_stem(factor)),
            report::dispersion_csv(summaries, labels).into_bytes(),
        ));
    }

    let log = PreprocessingLog {
        records: parsed.records.len(),
        blank_values: parsed.blank_values,
        leap_records_dropped: leap_dropped,
        exclusion: exclusion.as_ref(),
        cells_imputed: imputed,
        preprocessing: &cfg.preprocessing,
        flat_columns: &flat_columns,
    };
    files.push((
        "preprocessing.txt".to_string(),
        report::preprocessing_txt(&log).into_bytes(),
    ));

    if cfg.plots {
        render_plots(cfg, &table, &views, &diag, &mut files)?;
    }

    let term_records: Vec<(String, usize, Vec<f64>, Vec<f64>)> = design
        .effect_terms()
        .iter()
        .zip(&views)
        .map(|(t, view)| {
            (
                t.name.clone(),
                t.df(),
                view.singular_values.iter().copied().collect(),
                view.explained_fraction.clone(),
            )
        })
        .collect();
    let mut artifact_names: Vec<String> = files.iter().map(|(n, _)| n.clone()).collect();
    artifact_names.push("manifest.txt".to_string());
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: sha256_hex(cfg_bytes),
        input_sha256: input_sha,
        seed: cfg.seed,
        permutations: cfg.permutations,
        rng: RNG_CONTRACT,
        preprocessing: &cfg.preprocessing,
        reference: reference.as_deref().unwrap_or("residuals"),
        tensor_shape,
        n_rows: table.nrows(),
        n_cols: table.ncols(),
        terms: term_records,
        control_percentile: cfg.control_percentile,
        q_limit: diag.q_limit,
        d_limit: diag.d_limit,
        acf_lags: diag.acf.as_ref().map(|a| a.len().saturating_sub(1)),
        artifacts: artifact_names,
    };
    files.push((
        "manifest.txt".to_string(),
        report::manifest_txt(&manifest).into_bytes(),
    ));

    let written = report::write_artifacts(&out_dir, &files)?;
    Ok(RunOutcome {
        out_dir,
        files: written,
        table: anova,
        n_rows: table.nrows(),
        n_cols: table.ncols(),
    })
}
