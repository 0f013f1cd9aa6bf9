use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mposterior::measures::EmpiricalMeasure;
use serde_json::Value;

fn mposterior(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mposterior")).args(args).output().expect("binary runs")
}

fn write_cloud(path: &Path, center: f64, n: usize) {
    let atoms = (0..n).map(|i| vec![center + (i as f64 / n as f64 - 0.5) * 0.2]).collect();
    EmpiricalMeasure::uniform(atoms).unwrap().write(path).unwrap();
}

#[test]
fn aggregate_writes_weights_and_measure() {
    let dir = tempfile::tempdir().unwrap();
    let draws = dir.path().join("draws");
    fs::create_dir(&draws).unwrap();
    for j in 0..4 {
        write_cloud(&draws.join(format!("s{j}.csv")), 0.01 * j as f64, 20);
    }
    write_cloud(&draws.join("s4.csv"), 50.0, 20);
    let out = dir.path().join("result.json");
    let measure = dir.path().join("mp.csv");
    let o = mposterior(&[
        "aggregate",
        "--draws",
        draws.to_str().unwrap(),
        "--kernel",
        "gaussian:1",
        "--out",
        out.to_str().unwrap(),
        "--measure-out",
        measure.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let w: Vec<f64> = serde_json::from_value(v["weights"].clone()).unwrap();
    assert_eq!(w.len(), 5);
    assert_eq!(w[4], 0.0);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(v["iterations"].as_u64().unwrap() >= 1);
    assert!(v["converged"].as_bool().unwrap());
    assert!(v["objective_trace"].as_array().unwrap().len() >= 2);
    assert_eq!(v["kernel"]["type"], "gaussian");

    let mp = EmpiricalMeasure::read(&measure).unwrap();
    assert_eq!(mp.len(), 100);
    assert!(mp.mean()[0].abs() < 0.05);
}

#[test]
fn aggregate_accepts_a_mahalanobis_matrix_file() {
    let dir = tempfile::tempdir().unwrap();
    let draws = tempfile::tempdir().unwrap();
    for j in 0..3 {
        write_cloud(&draws.path().join(format!("s{j}.csv")), j as f64, 5);
    }
    let a = dir.path().join("a.json");
    fs::write(&a, "[[0.5]]").unwrap();
    let kernel = format!("mahalanobis:{}", a.display());
    let o = mposterior(&["aggregate", "--draws", draws.path().to_str().unwrap(), "--kernel", &kernel, "--no-threshold"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["kernel"]["type"], "mahalanobis");
    assert_eq!(v["weights"], v["weiszfeld_weights"]);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    write_cloud(&dir.path().join("s0.csv"), 0.0, 5);
    let d = dir.path().to_str().unwrap();
    assert_eq!(mposterior(&["aggregate", "--draws", d, "--kernel", "cosine"]).status.code(), Some(2));
    assert_eq!(mposterior(&["aggregate", "--draws", d, "--kernel", "gaussian:-1"]).status.code(), Some(2));
    assert_eq!(mposterior(&["concentration", "--alpha", "0.1", "--q", "0.2"]).status.code(), Some(2));
    assert_eq!(mposterior(&["partition", "--n", "4", "--m", "3"]).status.code(), Some(2));
    assert_eq!(mposterior(&["simulate-gp", "--case", "3"]).status.code(), Some(2));
    assert_eq!(mposterior(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let draws = tempfile::tempdir().unwrap();
    write_cloud(&draws.path().join("s0.csv"), 0.0, 5);
    let a = dir.path().join("a.json");
    fs::write(&a, "[[-1.0]]").unwrap();
    let kernel = format!("mahalanobis:{}", a.display());
    let o = mposterior(&["aggregate", "--draws", draws.path().to_str().unwrap(), "--kernel", &kernel]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_gaussian_writes_coverage_csv() {
    let o = mposterior(&[
        "simulate-gaussian",
        "--reps",
        "3",
        "--max-outlier",
        "2",
        "--levels",
        "0.1,0.05",
        "--full-draws",
        "200",
        "--seed",
        "9",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_reader(o.stdout.as_slice());
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(&headers[0], "outlier_index");
    assert_eq!(&headers[3], "coverage");
    let rows: Vec<_> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2 * 2 * 3);
    for r in &rows {
        let c: f64 = r[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&c));
    }
}

#[test]
fn simulate_gp_writes_curves_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gp.csv");
    let summary = dir.path().join("summary.csv");
    let o = mposterior(&[
        "simulate-gp",
        "--case",
        "1",
        "--reps",
        "2",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
        "--summary",
        summary.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("replication,method,x,f0,median,lower,upper"));
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 100);
    assert!(fs::read_to_string(&summary).unwrap().lines().count() >= 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("wins"));
}

#[test]
fn concentration_reports_json() {
    let o = mposterior(&["concentration", "--trials", "200", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["trials"], 200);
    assert!((v["geometric_bound"].as_f64().unwrap() - 0.4807).abs() < 1e-4);
}

#[test]
fn partition_and_draws_feed_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let o = mposterior(&["partition", "--n", "5", "--m", "2", "--strategy", "grid"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["groups"], serde_json::json!([[0, 2, 4], [1, 3]]));
    assert_eq!(v["strategy"], "grid_strided");

    let data = dir.path().join("data.csv");
    let mut text = String::from("x1,x2\n");
    for i in 0..40 {
        text.push_str(&format!("{},{}\n", (i % 7) as f64 * 0.1, -((i % 5) as f64) * 0.1));
    }
    fs::write(&data, text).unwrap();
    let draws = dir.path().join("draws");
    let o = mposterior(&[
        "gaussian-draws",
        "--data",
        data.to_str().unwrap(),
        "--m",
        "4",
        "--draws",
        "50",
        "--prior",
        "normal:10",
        "--out",
        draws.to_str().unwrap(),
        "--plan",
        dir.path().join("plan.json").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let plan: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["groups"].as_array().unwrap().len(), 4);
    let q = EmpiricalMeasure::read(draws.join("subset_0.csv")).unwrap();
    assert_eq!((q.len(), q.dim()), (50, 2));

    let o = mposterior(&["aggregate", "--draws", draws.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["weights"].as_array().unwrap().len(), 4);
}

#[test]
fn select_m_sweeps_subdirectories() {
    let dir = tempfile::tempdir().unwrap();
    for m in [2usize, 3, 4] {
        let sub = dir.path().join(format!("m{m}"));
        fs::create_dir(&sub).unwrap();
        let center = if m == 4 { 5.0 } else { 0.0 };
        for j in 0..m {
            write_cloud(&sub.join(format!("s{j}.csv")), center, 10);
        }
    }
    let o = mposterior(&[
        "select-m",
        "--draws",
        dir.path().to_str().unwrap(),
        "--m-range",
        "2:4:1",
        "--kernel",
        "gaussian:1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["selected_m"], 2);
    assert_eq!(v["candidates"].as_array().unwrap().len(), 3);

    let o = mposterior(&["select-m", "--draws", dir.path().to_str().unwrap(), "--m-range", "2:5"]);
    assert_eq!(o.status.code(), Some(2));
}
