//! Run configuration: a TOML document describing the whole pipeline, plus
//! the validation pass that turns structural mistakes into field-level
//! messages before any data is read.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use asca_core::tensor::TimeUnit;

fn default_reference() -> String {
    "residuals".to_string()
}

fn default_components() -> usize {
    2
}

fn default_year_start_day() -> u32 {
    1
}

fn default_plots() -> bool {
    true
}

fn default_acf_max_lag() -> usize {
    48
}

fn default_control_percentile() -> f64 {
    99.0
}

/// Everything a run needs. `seed` and `permutations` are mandatory so a
/// config never picks randomness silently.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    pub seed: u64,
    pub permutations: usize,
    /// "center" or "autoscale".
    pub preprocessing: String,
    /// F denominator: "residuals" or a term name.
    #[serde(default = "default_reference")]
    pub reference: String,
    /// Components kept per effect in the score/loading views.
    #[serde(default = "default_components")]
    pub components: usize,
    /// Day of the 365-day year on which a cycle year starts; 244 gives
    /// hydrological years.
    #[serde(default = "default_year_start_day")]
    pub year_start_day: u32,
    /// Rows with more missing cells than this are dropped before
    /// imputation; absent means no row exclusion.
    #[serde(default)]
    pub row_exclusion_threshold: Option<usize>,
    #[serde(default)]
    pub write_null_distributions: bool,
    #[serde(default = "default_plots")]
    pub plots: bool,
    #[serde(default = "default_acf_max_lag")]
    pub acf_max_lag: usize,
    /// Percentile for the Q and D control limits.
    #[serde(default = "default_control_percentile")]
    pub control_percentile: f64,
    #[serde(default, rename = "mode")]
    pub modes: Vec<ModeDecl>,
    pub unfolding: Unfolding,
    #[serde(default, rename = "aggregate")]
    pub aggregates: Vec<AggregateDecl>,
    #[serde(default, rename = "factor")]
    pub factors: Vec<FactorDecl>,
    #[serde(default, rename = "interaction")]
    pub interactions: Vec<InteractionDecl>,
}

/// One tensor mode. Which fields apply depends on `kind`:
/// cyclostationary modes take `frequency` and `period`, series modes take
/// `levels`, evolution modes take either `years` (a span of calendar
/// years) or a `frequency`/`period` pair (a walk through one cycle).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeDecl {
    pub name: String,
    /// "cyclostationary", "evolution", or "series".
    pub kind: String,
    #[serde(default)]
    pub frequency: Option<String>,
    #[serde(default)]
    pub period: Option<String>,
    #[serde(default)]
    pub years: Option<usize>,
    #[serde(default)]
    pub base_year: Option<i32>,
    #[serde(default)]
    pub levels: Option<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Unfolding {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
}

/// Block-average one mode before unfolding, optionally renaming it to
/// reflect the new granularity (day -> fortnight).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateDecl {
    pub mode: String,
    pub block: usize,
    #[serde(default)]
    pub absorb_remainder: bool,
    #[serde(default)]
    pub rename: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorDecl {
    /// Row mode the factor levels come from.
    pub mode: String,
    /// "nominal" or "ordinal".
    pub kind: String,
    #[serde(default)]
    pub nested_in: Option<String>,
}

impl FactorDecl {
    /// Name of this factor's term in the fitted model.
    pub fn term_name(&self) -> String {
        match &self.nested_in {
            Some(outer) => format!("{}({})", self.mode, outer),
            None => self.mode.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionDecl {
    /// Exactly two factor modes.
    pub between: Vec<String>,
}

impl InteractionDecl {
    pub fn term_name(&self) -> String {
        self.between.join("\u{d7}")
    }
}

/// One validation failure, tied to the config field that caused it.
#[derive(Debug, Clone)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Parse "hour", "3h", "day", "week", "fortnight", or "year".
pub fn parse_time_unit(s: &str) -> Option<TimeUnit> {
    match s {
        "hour" => Some(TimeUnit::Hours(1)),
        "day" => Some(TimeUnit::Day),
        "week" => Some(TimeUnit::Week),
        "fortnight" => Some(TimeUnit::Fortnight),
        "year" => Some(TimeUnit::Year),
        other => other
            .strip_suffix('h')
            .and_then(|n| n.parse::<u32>().ok())
            .filter(|&n| n > 0)
            .map(TimeUnit::Hours),
    }
}

/// Reference strings accept `*` as a spelling of the interaction sign.
pub fn normalize_term(s: &str) -> String {
    s.replace('*', "\u{d7}")
}

/// Read and parse a config file. The raw bytes come back too so the run
/// manifest can record their hash.
pub fn load(path: &Path) -> Result<(PipelineConfig, Vec<u8>), String> {
    let bytes = std::fs::read(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| format!("config {} is not valid UTF-8", path.display()))?;
    let cfg: PipelineConfig =
        toml::from_str(text).map_err(|e| format!("config {}: {e}", path.display()))?;
    Ok((cfg, bytes))
}

/// Check everything that can be checked without data. An empty result
/// means `run` cannot fail for configuration reasons.
pub fn validate(cfg: &PipelineConfig) -> Vec<Violation> {
    let mut v: Vec<Violation> = Vec::new();
    let mut push = |field: &str, message: String| {
        v.push(Violation {
            field: field.to_string(),
            message,
        })
    };

    if cfg.input.as_os_str().is_empty() {
        push("input", "input path is empty".into());
    }
    if cfg.output.as_os_str().is_empty() {
        push("output", "output path is empty".into());
    }
    if cfg.permutations == 0 {
        push("permutations", "at least one permutation is required".into());
    }
    if cfg.components == 0 {
        push("components", "at least one component is required".into());
    }
    if !(1..=365).contains(&cfg.year_start_day) {
        push("year_start_day", "must lie in 1..=365".into());
    }
    if cfg.acf_max_lag == 0 {
        push("acf_max_lag", "must be at least 1".into());
    }
    if !(cfg.control_percentile > 0.0 && cfg.control_percentile < 100.0) {
        push("control_percentile", "must lie strictly between 0 and 100".into());
    }
    if cfg.preprocessing != "center" && cfg.preprocessing != "autoscale" {
        push(
            "preprocessing",
            format!("'{}' is not one of center, autoscale", cfg.preprocessing),
        );
    }

    if cfg.modes.is_empty() {
        push("mode", "at least one mode is required".into());
    }
    let mut evolution = 0usize;
    let mut series = 0usize;
    for (i, m) in cfg.modes.iter().enumerate() {
        let field = format!("mode[{i}]");
        if m.name.is_empty() {
            push(&field, "mode name is empty".into());
        }
        if cfg.modes[..i].iter().any(|o| o.name == m.name) {
            push(&field, format!("mode name '{}' is declared twice", m.name));
        }
        let freq = m.frequency.as_deref().map(parse_time_unit);
        let per = m.period.as_deref().map(parse_time_unit);
        if matches!(freq, Some(None)) {
            push(
                &format!("{field}.frequency"),
                format!("'{}' is not a time unit", m.frequency.as_deref().unwrap_or("")),
            );
        }
        if matches!(per, Some(None)) {
            push(
                &format!("{field}.period"),
                format!("'{}' is not a time unit", m.period.as_deref().unwrap_or("")),
            );
        }
        match m.kind.as_str() {
            "cyclostationary" => {
                if m.frequency.is_none() || m.period.is_none() {
                    push(&field, "cyclostationary modes need frequency and period".into());
                } else if let (Some(Some(f)), Some(Some(p))) = (freq, per) {
                    if f.hours() > p.hours() {
                        push(&field, "frequency is coarser than the period".into());
                    }
                }
                if m.levels.is_some() || m.years.is_some() || m.base_year.is_some() {
                    push(&field, "levels, years, base_year apply to other kinds".into());
                }
            }
            "evolution" => {
                evolution += 1;
                let span = m.years.is_some();
                let cycle = m.frequency.is_some() && m.period.is_some();
                if span == cycle {
                    push(&field, "give either years or a frequency/period pair".into());
                }
                if m.years == Some(0) {
                    push(&format!("{field}.years"), "must be at least 1".into());
                }
                if m.levels.is_some() {
                    push(&field, "levels apply to series modes".into());
                }
            }
            "series" => {
                series += 1;
                match &m.levels {
                    None => push(&field, "series modes need a levels list".into()),
                    Some(levels) => {
                        if levels.is_empty() {
                            push(&format!("{field}.levels"), "levels list is empty".into());
                        }
                        for (j, l) in levels.iter().enumerate() {
                            if levels[..j].contains(l) {
                                push(
                                    &format!("{field}.levels"),
                                    format!("level '{l}' appears twice"),
                                );
                            }
                        }
                    }
                }
                if m.frequency.is_some() || m.period.is_some() || m.years.is_some() {
                    push(&field, "frequency, period, years apply to temporal modes".into());
                }
            }
            other => push(
                &format!("{field}.kind"),
                format!("'{other}' is not one of cyclostationary, evolution, series"),
            ),
        }
    }
    if evolution > 1 {
        push("mode", "at most one evolution mode is allowed".into());
    }
    if series > 1 {
        push("mode", "at most one series mode is supported".into());
    }

    for (i, a) in cfg.aggregates.iter().enumerate() {
        if a.block == 0 {
            push(&format!("aggregate[{i}].block"), "must be at least 1".into());
        }
    }
    // Renames apply in order, so aggregate targets and the final name set
    // are resolved together.
    let mut names: Vec<String> = cfg.modes.iter().map(|m| m.name.clone()).collect();
    for (i, a) in cfg.aggregates.iter().enumerate() {
        match names.iter().position(|n| *n == a.mode) {
            None => push(
                &format!("aggregate[{i}].mode"),
                format!("'{}' is not a mode at this point in the chain", a.mode),
            ),
            Some(pos) => {
                if let Some(new) = &a.rename {
                    if names.iter().any(|n| n == new) {
                        push(
                            &format!("aggregate[{i}].rename"),
                            format!("'{new}' collides with an existing mode"),
                        );
                    }
                    names[pos] = new.clone();
                }
            }
        }
    }
    let finals = names;

    let rows = &cfg.unfolding.rows;
    let cols = &cfg.unfolding.columns;
    if cols.is_empty() {
        push("unfolding.columns", "at least one mode must be assigned to the columns".into());
    }
    for (side, list) in [("rows", rows), ("columns", cols)] {
        for name in list {
            if !finals.contains(name) {
                push(
                    &format!("unfolding.{side}"),
                    format!("'{name}' is not a declared mode"),
                );
            }
        }
    }
    for name in rows {
        if cols.contains(name) {
            push("unfolding", format!("mode '{name}' is assigned to both sides"));
        }
    }
    for name in &finals {
        if !rows.contains(name) && !cols.contains(name) {
            push("unfolding", format!("mode '{name}' is assigned to neither side"));
        }
    }
    if let Some(pos) = cfg.modes.iter().position(|m| m.kind == "evolution") {
        if let Some(final_name) = finals.get(pos) {
            if cols.contains(final_name) {
                push(
                    "unfolding.columns",
                    format!("evolution mode '{final_name}' must be placed in the rows"),
                );
            }
        }
    }

    if cfg.factors.is_empty() {
        push("factor", "at least one factor is required".into());
    }
    for (i, f) in cfg.factors.iter().enumerate() {
        let field = format!("factor[{i}]");
        if !rows.contains(&f.mode) {
            push(
                &format!("{field}.mode"),
                format!("'{}' is not a row mode of the unfolding", f.mode),
            );
        }
        if cfg.factors[..i].iter().any(|o| o.mode == f.mode) {
            push(&format!("{field}.mode"), format!("factor '{}' is declared twice", f.mode));
        }
        if f.kind != "nominal" && f.kind != "ordinal" {
            push(
                &format!("{field}.kind"),
                format!("'{}' is not one of nominal, ordinal", f.kind),
            );
        }
        if let Some(outer) = &f.nested_in {
            if outer == &f.mode {
                push(&format!("{field}.nested_in"), "a factor cannot nest in itself".into());
            } else if !cfg.factors.iter().any(|o| o.mode == *outer) {
                push(
                    &format!("{field}.nested_in"),
                    format!("'{outer}' is not a declared factor"),
                );
            }
        }
    }

    let nested_pair = |a: &str, b: &str| {
        cfg.factors.iter().any(|f| {
            (f.mode == a && f.nested_in.as_deref() == Some(b))
                || (f.mode == b && f.nested_in.as_deref() == Some(a))
        })
    };
    for (i, inter) in cfg.interactions.iter().enumerate() {
        let field = format!("interaction[{i}].between");
        if inter.between.len() != 2 {
            push(&field, "exactly two factors are required".into());
            continue;
        }
        let (a, b) = (&inter.between[0], &inter.between[1]);
        if a == b {
            push(&field, "the two factors must differ".into());
        }
        for name in [a, b] {
            if !cfg.factors.iter().any(|f| f.mode == *name) {
                push(&field, format!("'{name}' is not a declared factor"));
            }
        }
        if nested_pair(a, b) {
            push(
                &field,
                format!("'{a}' and '{b}' are in a nesting relationship; their interaction is confounded"),
            );
        }
        if cfg.interactions[..i].iter().any(|o| {
            o.between.len() == 2
                && ((o.between[0] == *a && o.between[1] == *b)
                    || (o.between[0] == *b && o.between[1] == *a))
        }) {
            push(&field, format!("interaction '{a}'/'{b}' is declared twice"));
        }
    }

    let reference = normalize_term(&cfg.reference);
    if reference != "residuals" {
        let known = cfg.factors.iter().any(|f| f.mode == reference)
            || cfg
                .interactions
                .iter()
                .any(|i| i.term_name() == reference);
        if !known {
            push(
                "reference",
                format!("'{}' is neither 'residuals' nor a declared term", cfg.reference),
            );
        }
    }

    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> String {
        r#"
input = "data.csv"
output = "out"
seed = 7
permutations = 99
preprocessing = "center"

[[mode]]
name = "site"
kind = "series"
levels = ["a", "b", "c"]

[[mode]]
name = "hour"
kind = "cyclostationary"
frequency = "hour"
period = "day"

[unfolding]
rows = ["site"]
columns = ["hour"]

[[factor]]
mode = "site"
kind = "nominal"
"#
        .to_string()
    }

    #[test]
    fn minimal_config_validates_cleanly() {
        let cfg: PipelineConfig = toml::from_str(&minimal_toml()).unwrap();
        let violations = validate(&cfg);
        assert!(violations.is_empty(), "{violations:?}");
        assert_eq!(cfg.reference, "residuals");
        assert_eq!(cfg.components, 2);
        assert!(cfg.plots);
    }

    #[test]
    fn empty_columns_and_misplaced_evolution_are_flagged() {
        let toml = r#"
input = "data.csv"
output = "out"
seed = 7
permutations = 99
preprocessing = "center"

[[mode]]
name = "year"
kind = "evolution"
years = 3

[[mode]]
name = "day"
kind = "cyclostationary"
frequency = "day"
period = "year"

[unfolding]
rows = ["day"]
columns = ["year"]

[[factor]]
mode = "day"
kind = "nominal"
"#;
        let cfg: PipelineConfig = toml::from_str(toml).unwrap();
        let violations = validate(&cfg);
        assert!(violations
            .iter()
            .any(|v| v.field == "unfolding.columns" && v.message.contains("evolution")));
    }

    #[test]
    fn nested_interaction_is_rejected() {
        let toml = r#"
input = "data.csv"
output = "out"
seed = 7
permutations = 99
preprocessing = "center"

[[mode]]
name = "region"
kind = "series"
levels = ["r1", "r2"]

[[mode]]
name = "day"
kind = "cyclostationary"
frequency = "day"
period = "week"

[[mode]]
name = "hour"
kind = "cyclostationary"
frequency = "hour"
period = "day"

[unfolding]
rows = ["region", "day"]
columns = ["hour"]

[[factor]]
mode = "region"
kind = "nominal"

[[factor]]
mode = "day"
kind = "nominal"
nested_in = "region"

[[interaction]]
between = ["region", "day"]
"#;
        let cfg: PipelineConfig = toml::from_str(toml).unwrap();
        let violations = validate(&cfg);
        assert!(violations
            .iter()
            .any(|v| v.field.starts_with("interaction[0]") && v.message.contains("nesting")));
    }

    #[test]
    fn unknown_fields_fail_to_parse() {
        let mut toml = minimal_toml();
        toml.push_str("\nbogus_key = 1\n");
        assert!(toml::from_str::<PipelineConfig>(&toml).is_err());
    }

    #[test]
    fn time_units_parse_and_reject() {
        assert_eq!(parse_time_unit("3h"), Some(TimeUnit::Hours(3)));
        assert_eq!(parse_time_unit("fortnight"), Some(TimeUnit::Fortnight));
        assert_eq!(parse_time_unit("0h"), None);
        assert_eq!(parse_time_unit("minute"), None);
    }

    #[test]
    fn reference_accepts_star_spelling_of_interactions() {
        let mut toml = minimal_toml();
        toml = toml.replace("preprocessing = \"center\"", "preprocessing = \"center\"\nreference = \"site\"");
        let cfg: PipelineConfig = toml::from_str(&toml).unwrap();
        assert!(validate(&cfg).is_empty());
        assert_eq!(normalize_term("a*b"), "a\u{d7}b");
    }
}
