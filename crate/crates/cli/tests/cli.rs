use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_soco");

fn soco(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(cwd).output().expect("binary runs")
}

fn example_config() -> String {
    let out = soco(&["example-config"], Path::new("."));
    assert!(out.status.success());
    String::from_utf8(out.stdout).expect("utf-8")
}

/// Writes the example config into `dir` with its outputs redirected to `out`.
fn write_config(dir: &Path, out: &str, edit: impl Fn(String) -> String) -> String {
    let text = edit(example_config()).replace("dir = \"soco-output\"", &format!("dir = \"{out}\""));
    let path = dir.join("experiment.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn sorted_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    names
}

#[test]
fn example_config_writes_csvs_and_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "out", |t| t);
    let out = soco(&["run", &cfg], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files = sorted_files(&tmp.path().join("out"));
    let csv = files.iter().filter(|f| f.ends_with(".csv")).count();
    let svg = files.iter().filter(|f| f.ends_with(".svg")).count();
    assert_eq!((csv, svg), (4, 1), "{files:?}");

    let seed = fs::read_to_string(tmp.path().join("out/seed_1.csv")).unwrap();
    let mut lines = seed.lines();
    assert_eq!(
        lines.next(),
        Some("t,inst_risk,cum_risk,comparator_cum_risk,regret,theorem_bound_value,clip_events,weights_snapshot")
    );
    assert_eq!(lines.count(), 2000);
    let summary = fs::read_to_string(tmp.path().join("out/summary.csv")).unwrap();
    assert!(summary.starts_with("seed,terminal_regret,bound_value,exceeded"));
    assert_eq!(summary.lines().count(), 4);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "a", |t| t);
    assert!(soco(&["run", &cfg], tmp.path()).status.success());
    let cfg = write_config(tmp.path(), "b", |t| t);
    assert!(soco(&["run", &cfg], tmp.path()).status.success());
    for name in sorted_files(&tmp.path().join("a")) {
        let a = fs::read(tmp.path().join("a").join(&name)).unwrap();
        let b = fs::read(tmp.path().join("b").join(&name)).unwrap();
        assert!(a == b, "{name} differs between runs");
    }
}

#[test]
fn invalid_delta_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "out", |t| t.replace("delta = 0.05", "delta = 1.5"));
    let out = soco(&["run", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("delta"));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn unknown_config_field_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "out", |t| t.replace("delta = 0.05", "delta = 0.05\ndetla = 0.1"));
    let out = soco(&["run", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("detla"));
}

#[test]
fn missing_config_file_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = soco(&["run", "nope.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_gradients_passes() {
    let out = soco(&["verify", "gradients"], Path::new("."));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().filter(|l| l.starts_with("[pass]")).count() >= 4);
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn unknown_suite_prints_usage() {
    let out = soco(&["verify", "everything"], Path::new("."));
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("usage") && stderr.contains("pathwise-ons"));
}

#[test]
fn example_config_mentions_every_section() {
    let text = example_config();
    for section in [
        "[experiment]",
        "[experiment.learner]",
        "[experiment.family]",
        "[experiment.generator]",
        "[search]",
        "[output]",
    ] {
        assert!(text.contains(section), "missing {section}");
    }
}
