//! Drives the compiled binary end to end: exit codes, artifact layout,
//! and byte-stable reruns.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_asca")
}

fn run_cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary should start")
}

/// Four sites sampled hourly over one week: 4 x 7 rows of 24 hourly
/// columns once unfolded.
fn write_week_csv(path: &Path) {
    let mut csv = String::from("timestamp,series,value\n");
    let sites = ["north", "south", "east", "west"];
    for (s, site) in sites.iter().enumerate() {
        for day in 0..7u32 {
            for hour in 0..24u32 {
                // Deterministic structure: a site offset, a daily cycle,
                // and a pinch of hash noise.
                let phase = (hour as f64) / 24.0 * std::f64::consts::TAU;
                let noise = ((s * 1000 + day as usize * 24 + hour as usize + 1) as f64 * 12.9898)
                    .sin()
                    * 43758.5453;
                let value = s as f64 * 3.0 + phase.sin() + noise.fract() * 0.1;
                csv.push_str(&format!(
                    "2024-03-{:02}T{:02}:00:00,{},{}\n",
                    4 + day,
                    hour,
                    site,
                    value
                ));
            }
        }
    }
    fs::write(path, csv).unwrap();
}

fn write_week_config(dir: &Path, extra: &str) -> PathBuf {
    let config = format!(
        r#"
input = "week.csv"
output = "out"
seed = 11
permutations = 99
preprocessing = "center"
components = 2
acf_max_lag = 10
{extra}

[[mode]]
name = "site"
kind = "series"
levels = ["north", "south", "east", "west"]

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
rows = ["site", "day"]
columns = ["hour"]

[[factor]]
mode = "site"
kind = "nominal"
"#
    );
    let path = dir.join("run.toml");
    fs::write(&path, config).unwrap();
    path
}

#[test]
fn version_subcommand_prints_a_version() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(&["version"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("asca "));
    assert!(text.contains('.'));
}

#[test]
fn validate_accepts_a_sound_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_week_config(dir.path(), "");
    let out = run_cli(&["validate", config.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn validate_reports_field_level_violations_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let broken = r#"
input = "week.csv"
output = "out"
seed = 1
permutations = 0
preprocessing = "median"

[[mode]]
name = "hour"
kind = "cyclostationary"
frequency = "hour"
period = "day"

[unfolding]
rows = ["hour"]
columns = []

[[factor]]
mode = "hour"
kind = "nominal"
"#;
    let path = dir.path().join("broken.toml");
    fs::write(&path, broken).unwrap();
    let out = run_cli(&["validate", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("permutations"));
    assert!(err.contains("preprocessing"));
    assert!(err.contains("unfolding.columns"));
}

#[test]
fn malformed_toml_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "input = [unclosed").unwrap();
    let out = run_cli(&["run", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_week_config(dir.path(), "");
    // week.csv never written
    let out = run_cli(&["run", config.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_writes_the_full_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    write_week_csv(&dir.path().join("week.csv"));
    let config = write_week_config(dir.path(), "write_null_distributions = true");
    let out = run_cli(&["run", config.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out_dir = dir.path().join("out");
    for name in [
        "table.csv",
        "table.txt",
        "scores_site.csv",
        "loadings_site.csv",
        "null_site.csv",
        "mspc.csv",
        "acf.csv",
        "dispersion_site.csv",
        "preprocessing.txt",
        "manifest.txt",
        "plots/scores_site.svg",
        "plots/loadings_site.svg",
        "plots/biplot_site.svg",
        "plots/mspc.svg",
        "plots/acf.svg",
        "plots/dispersion_site.svg",
    ] {
        assert!(out_dir.join(name).exists(), "missing artifact {name}");
    }

    let nulls = fs::read_to_string(out_dir.join("null_site.csv")).unwrap();
    assert_eq!(nulls.lines().count(), 100, "header plus 99 permutations");

    let manifest = fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed: 11"));
    assert!(manifest.contains("rng: chacha8-fisher-yates"));
    assert!(manifest.contains("config_sha256: "));
}

#[test]
fn anova_csv_round_trips_to_the_exact_values() {
    let dir = tempfile::tempdir().unwrap();
    write_week_csv(&dir.path().join("week.csv"));
    let config = write_week_config(dir.path(), "");
    let out = run_cli(&["run", config.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read_to_string(dir.path().join("out/table.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("term,SS,pct_SS,df,MS,F,p"));
    let mut terms = Vec::new();
    let mut total_pct = 0.0;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 7, "row shape: {line}");
        let ss: f64 = cells[1].parse().unwrap();
        let pct: f64 = cells[2].parse().unwrap();
        let df: usize = cells[3].parse().unwrap();
        assert!(ss >= 0.0 && df >= 1);
        terms.push(cells[0].to_string());
        if cells[0] != "total" {
            total_pct += pct;
        }
    }
    assert_eq!(terms, ["site", "residuals", "total"]);
    // Balanced one-factor design: the shares add back to the total.
    assert!((total_pct - 100.0).abs() < 1e-6, "pct sum {total_pct}");

    // 4 sites x 7 days, one nominal factor over 28 rows.
    let df_line = csv.lines().find(|l| l.starts_with("site,")).unwrap();
    assert_eq!(df_line.split(',').nth(3), Some("3"));
    let resid = csv.lines().find(|l| l.starts_with("residuals,")).unwrap();
    assert_eq!(resid.split(',').nth(3), Some("24"));
}

#[test]
fn reruns_and_output_override_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_week_csv(&dir.path().join("week.csv"));
    let config = write_week_config(dir.path(), "");

    let first = run_cli(&["run", config.to_str().unwrap()], dir.path());
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let second = run_cli(
        &["run", config.to_str().unwrap(), "--output", "again"],
        dir.path(),
    );
    assert!(second.status.success(), "{}", String::from_utf8_lossy(&second.stderr));

    let base = dir.path().join("out");
    let again = dir.path().join("again");
    let mut names: Vec<PathBuf> = Vec::new();
    collect_files(&base, &base, &mut names);
    assert!(!names.is_empty());
    for rel in names {
        let a = fs::read(base.join(&rel)).unwrap();
        let b = fs::read(again.join(&rel)).unwrap();
        assert_eq!(a, b, "artifact {} differs between runs", rel.display());
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else {
            out.push(path.strip_prefix(root).unwrap().to_path_buf());
        }
    }
}
