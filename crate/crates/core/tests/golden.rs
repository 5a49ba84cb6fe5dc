//! Golden values produced by tests/oracles/analyze_oracle.py, an independent
//! step-by-step reimplementation in numpy, statsmodels and scipy.

use std::collections::BTreeMap;
use std::fs::File;
use std::process::Command;

use demediate::dgm::read_dataset_csv;
use demediate::mmrm::{fit_mmrm, mmrm_contrast_t2, set_post_ie_missing, MaskRule};

const BIN: &str = env!("CARGO_BIN_EXE_demediate");
const DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

fn golden(name: &str) -> BTreeMap<String, Vec<f64>> {
    let mut r = csv::Reader::from_path(format!("{DIR}/{name}")).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            let nums = rec.iter().skip(1).filter(|s| !s.is_empty()).map(|s| s.parse().unwrap()).collect();
            (rec[0].to_string(), nums)
        })
        .collect()
}

fn analyze(args: &[&str]) -> std::process::Output {
    Command::new(BIN).arg("analyze").args(args).output().unwrap()
}

#[test]
fn analyze_matches_reference_on_ten_patients() {
    let want = golden("analyze10.golden.csv");
    let out = analyze(&[
        &format!("{DIR}/analyze10.csv"),
        "--methods",
        "established,mod1,mod2,mod3",
        "--format",
        "csv",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut seen = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        let w = &want[&rec[0]];
        let theta: f64 = rec[1].parse().unwrap();
        let se: f64 = rec[2].parse().unwrap();
        // The CLI prints 6 decimals.
        assert!((theta - w[0]).abs() < 1e-6, "{}: {theta} vs {}", &rec[0], w[0]);
        assert!((se - w[1]).abs() < 1e-6, "{}: {se} vs {}", &rec[0], w[1]);
        seen += 1;
    }
    assert_eq!(seen, 4);
}

#[test]
fn mmrm_matches_direct_reml_maximisation() {
    let want = &golden("mmrm12.golden.csv")["mmrm"];
    let trial = read_dataset_csv(File::open(format!("{DIR}/mmrm12.csv")).unwrap()).unwrap();
    let fit = fit_mmrm(&set_post_ie_missing(&trial, MaskRule::AtInitiation)).unwrap();
    assert!(fit.converged);
    let (theta, se) = mmrm_contrast_t2(&fit);
    assert!((theta - want[0]).abs() < 1e-4, "{theta} vs {}", want[0]);
    assert!((se - want[1]).abs() < 1e-4, "{se} vs {}", want[1]);
    assert!((fit.reml_loglik - want[2]).abs() < 1e-4, "{} vs {}", fit.reml_loglik, want[2]);
}

#[test]
fn all_zero_initiation_gives_identical_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.csv");
    let src = std::fs::read_to_string(format!("{DIR}/analyze10.csv")).unwrap();
    let flat: Vec<String> = src
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                return l.to_string();
            }
            let mut f: Vec<&str> = l.split(',').collect();
            f[7..10].iter_mut().for_each(|v| *v = "0");
            f.join(",")
        })
        .collect();
    std::fs::write(&path, flat.join("\n")).unwrap();
    let out = analyze(&[path.to_str().unwrap(), "--methods", "established,mod1,mod2,mod3", "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let thetas: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(thetas.len(), 4);
    assert!(thetas.iter().all(|t| *t == thetas[0]), "{thetas:?}");
}

#[test]
fn missing_column_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    let src = std::fs::read_to_string(format!("{DIR}/analyze10.csv")).unwrap();
    std::fs::write(&path, src.replacen("sym1,", "symone,", 1)).unwrap();
    let out = analyze(&[path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("sym1"), "{err}");
}
