//! End-to-end runs of the `wds` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn wds(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_wds")).args(args).output().expect("spawn wds");
    assert!(out.status.success(), "wds {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, cells: usize) {
    wds(&["synth", "--cells", &cells.to_string(), "--seed", "42", "--out-dir", p(dir)]);
}

#[test]
fn uniform_fraction_draws_ten_of_a_hundred() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 100);
    let expr = dir.path().join("expr.txt");
    let out = wds(&["sample", "--expr", p(&expr), "--uniform", "--fraction", "0.1"]);
    let ids: Vec<&str> = out.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(ids.len(), 10);
    let mut unique = ids.clone();
    unique.sort_unstable();
    unique.dedup();
    assert_eq!(unique.len(), 10);
    for line in out.lines() {
        let p: f64 = line.split('\t').nth(1).unwrap().parse().unwrap();
        assert!((p - 0.01).abs() < 1e-12);
    }
}

#[test]
fn stored_sketch_gives_the_same_densities() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 150);
    let expr = dir.path().join("expr.txt");
    let sketch = dir.path().join("sketch.bin");
    let hash = ["--seed", "3", "--rows", "50", "--range", "5000"];
    let mut args = vec!["sketch", "--expr", p(&expr), "--out", p(&sketch)];
    args.extend(hash);
    wds(&args);
    let via_sketch = wds(&["density", "--expr", p(&expr), "--sketch", p(&sketch)]);
    let mut args = vec!["density", "--expr", p(&expr)];
    args.extend(hash);
    let direct = wds(&args);
    assert_eq!(via_sketch, direct);
    assert_eq!(direct.lines().count(), 150);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 60);
    let expr = dir.path().join("expr.txt");
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# sampling\nk = 7\nuniform\n").unwrap();
    let out = wds(&["--config", p(&cfg), "sample", "--expr", p(&expr)]);
    assert_eq!(out.lines().count(), 7);
    let out = wds(&["--config", p(&cfg), "sample", "--expr", p(&expr), "-k", "3"]);
    assert_eq!(out.lines().count(), 3);
}

#[test]
fn malformed_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let expr = dir.path().join("bad.txt");
    fs::write(&expr, "c0 1 2.0\nc0 oops 1.0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_wds")).args(["oracle", "--expr", p(&expr)]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Full pipeline on the seed-42 planted dataset; every output must match the
/// checked-in files byte for byte. `UPDATE_GOLDEN=1` rewrites them.
#[test]
fn golden_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, 200);
    let (expr, labels, symbols) = (d.join("expr.txt"), d.join("labels.tsv"), d.join("symbols.tsv"));
    let gt = d.join("ground_truth.tsv");
    let density = d.join("density.tsv");
    let subset = d.join("subset.tsv");
    let ranked = d.join("ranked.tsv");
    let nes = d.join("nes.tsv");
    wds(&["density", "--expr", p(&expr), "--seed", "42", "--out", p(&density)]);
    wds(&["sample", "--density", p(&density), "--seed", "42", "--fraction", "0.5", "--out", p(&subset)]);
    wds(&[
        "discover",
        "--expr",
        p(&expr),
        "--labels",
        p(&labels),
        "--symbols",
        p(&symbols),
        "--subset",
        p(&subset),
        "--weighted-estimator",
        "--seed",
        "42",
        "--out",
        p(&ranked),
    ]);
    wds(&[
        "eval",
        "--ranked",
        p(&ranked),
        "--ground-truth",
        p(&gt),
        "--symbols",
        p(&symbols),
        "--n-perm",
        "200",
        "--seed",
        "42",
        "--out",
        p(&nes),
    ]);
    let golden = golden_dir();
    let names = ["expr.txt", "density.tsv", "subset.tsv", "ranked.tsv", "nes.tsv"];
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(&golden).unwrap();
        for name in names {
            fs::copy(d.join(name), golden.join(name)).unwrap();
        }
    }
    for name in names {
        let got = fs::read(d.join(name)).unwrap();
        let want = fs::read(golden.join(name)).unwrap_or_else(|_| panic!("missing golden file {name}"));
        assert!(got == want, "{name} differs from tests/golden/{name}");
    }
}
