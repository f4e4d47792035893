//! End-to-end acceptance: synthetic regression quality and the
//! over-fitting-resistance sweep, driven through the CLI entry point.
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vssgp::Dataset;
use vssgp_cli::{run_cli, write_csv};

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

/// Noisy 1-D sinusoid: three cycles over [0, 1), N points, noise sigma 0.1.
fn sinusoid_csv(path: &Path, n: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = DMatrix::from_fn(n, 1, |r, _| r as f64 / n as f64);
    let outputs = DMatrix::from_fn(n, 1, |r, _| {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        (2.0 * std::f64::consts::PI * 3.0 * inputs[(r, 0)]).sin() + 0.1 * z
    });
    let data = Dataset::new(inputs, outputs).unwrap();
    write_csv(path, &data).unwrap();
}

fn args(parts: &[&str]) -> Vec<String> {
    std::iter::once("vssgp")
        .chain(parts.iter().copied())
        .map(String::from)
        .collect()
}

struct Row {
    method: String,
    k: usize,
    test_rmse: f64,
}

fn parse_report(path: &Path) -> Vec<Row> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|line| {
            let cells: Vec<&str> = line.split(',').collect();
            Row {
                method: cells[0].to_string(),
                k: cells[1].parse().unwrap(),
                test_rmse: cells[4].parse().unwrap(),
            }
        })
        .collect()
}

/// Criterion 10: On the noisy sinusoid (N=200, K=20, 500 quasi-Newton iterations,
/// five removed segments), held-out RMSE stays at the noise level and the
/// variational model generalises at least as well as the plain
/// sparse-spectrum fit, averaged over 5 seeds.
#[test]
fn c10_synthetic_regression_quality() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sin.csv");
    sinusoid_csv(&data, 200, 77);
    let mut vssgp_rmse = Vec::new();
    let mut ssgp_rmse = Vec::new();
    for seed in 0..5 {
        let rep = dir.path().join(format!("report{seed}.csv"));
        let code = run_cli(&args(&[
            "impute",
            "--data",
            data.to_str().unwrap(),
            "--segments",
            "5",
            "--seg-length",
            "15",
            "--report-out",
            rep.to_str().unwrap(),
            "--methods",
            "vssgp,ssgp",
            "--num-features",
            "20",
            "--iters",
            "500",
            "--seed",
            &seed.to_string(),
            "--components",
            "0.1:0",
            "--deterministic",
        ]));
        assert_eq!(code, 0);
        for row in parse_report(&rep) {
            match row.method.as_str() {
                "vssgp" => vssgp_rmse.push(row.test_rmse),
                "ssgp" => ssgp_rmse.push(row.test_rmse),
                other => panic!("unexpected method {other}"),
            }
        }
    }
    let mean_v: f64 = vssgp_rmse.iter().sum::<f64>() / vssgp_rmse.len() as f64;
    let mean_s: f64 = ssgp_rmse.iter().sum::<f64>() / ssgp_rmse.len() as f64;
    report(
        "10 (held-out error at the noise level; variational fit generalises at least as well)",
        mean_v <= 0.2 && mean_v <= mean_s,
        &format!("mean held-out RMSE {mean_v:.4} (plain sparse-spectrum {mean_s:.4})"),
    );
}

/// Criterion 11: Sweeping the number of features per component, the held-out error at
/// the largest K stays within 20% of the best K, averaged over 5 seeds:
/// more parameters do not cause over-fitting.
#[test]
fn c11_overfitting_resistance_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sin.csv");
    sinusoid_csv(&data, 200, 77);
    let rep = dir.path().join("bench.csv");
    let code = run_cli(&args(&[
        "bench",
        "--data",
        data.to_str().unwrap(),
        "--k-values",
        "5,10,20,40,80",
        "--seeds",
        "5",
        "--segments",
        "5",
        "--seg-length",
        "15",
        "--report-out",
        rep.to_str().unwrap(),
        "--methods",
        "vssgp",
        "--iters",
        "300",
        "--components",
        "0.1:0",
        "--deterministic",
    ]));
    assert_eq!(code, 0);
    let rows = parse_report(&rep);
    assert_eq!(rows.len(), 25);
    let mut means = std::collections::BTreeMap::new();
    for k in [5usize, 10, 20, 40, 80] {
        let vals: Vec<f64> = rows.iter().filter(|r| r.k == k).map(|r| r.test_rmse).collect();
        assert_eq!(vals.len(), 5);
        means.insert(k, vals.iter().sum::<f64>() / 5.0);
    }
    let min = means.values().cloned().fold(f64::INFINITY, f64::min);
    let at_largest = means[&80];
    report(
        "11 (held-out error at the largest K within 20% of the best K)",
        at_largest <= 1.2 * min,
        &format!("per-K means {means:?}, largest-K/best ratio {:.3}", at_largest / min),
    );
}
