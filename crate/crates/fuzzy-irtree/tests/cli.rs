//! End-to-end checks of the command-line binary: deterministic simulation,
//! dataset roundtrip, report contents, and error reporting.

use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_fuzzy-irtree");

fn run(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn simulate(out: &Path, seed: &str) -> std::process::Output {
    run(&[
        "simulate",
        "--I",
        "150",
        "--M",
        "4",
        "--tree",
        "linear",
        "--alpha",
        "-1",
        "--beta",
        "0.5,0.8",
        "--sigma",
        "0.5",
        "--covariate",
        "sex=levels:F,M",
        "--covariate",
        "das=normal:0,1",
        "--seed",
        seed,
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert!(simulate(&a, "9").status.success());
    assert!(simulate(&b, "9").status.success());
    let ca = std::fs::read(&a).unwrap();
    let cb = std::fs::read(&b).unwrap();
    assert_eq!(ca, cb, "same seed must produce identical files");

    let c = dir.path().join("c.csv");
    assert!(simulate(&c, "10").status.success());
    assert_ne!(ca, std::fs::read(&c).unwrap(), "different seed, different data");
}

#[test]
fn fit_report_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    assert!(simulate(&data, "3").status.success());
    let out = run(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--M",
        "4",
        "--formula",
        "sex+das",
        "--starts",
        "2",
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in [
        "schema: fuzzy-irtree/report-v1",
        "kind: fit",
        "formula: sex+das",
        "rng_version:",
        "beta[sex=M]",
        "beta[das]",
        "sigma",
        "converged: true",
    ] {
        assert!(text.contains(needle), "missing {needle:?} in:\n{text}");
    }
}

#[test]
fn compare_selects_argmin_bic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    assert!(simulate(&data, "4").status.success());
    let out = run(&[
        "compare",
        "--data",
        data.to_str().unwrap(),
        "--M",
        "4",
        "--model",
        "tree=linear,formula=-",
        "--model",
        "tree=linear,formula=sex+das",
        "--starts",
        "1",
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("kind: compare"));
    assert!(text.contains("selected: linear(sex+das)"), "report:\n{text}");
}

#[test]
fn effects_emits_tidy_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    assert!(simulate(&data, "5").status.success());
    let out = run(&[
        "effects",
        "--data",
        data.to_str().unwrap(),
        "--M",
        "4",
        "--formula",
        "sex+das",
        "--covariate",
        "das",
        "--starts",
        "1",
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("setting,quantity,category,value"));
    // 4 das settings x 2 sex levels, each with pi_y (4), pi_s (4), xi (1)
    assert_eq!(text.lines().count(), 1 + 8 * 9, "table:\n{text}");
}

#[test]
fn bad_input_fails_with_machine_readable_error() {
    let out = run(&["fit", "--data", "/nonexistent.csv", "--M", "4"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error:"), "stderr was: {err}");

    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    assert!(simulate(&data, "6").status.success());
    let out = run(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--M",
        "4",
        "--formula",
        "nope",
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error:"), "stderr was: {err}");
}
