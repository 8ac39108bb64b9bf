mod common;

use std::path::Path;

use tempfile::TempDir;

use common::noisyor;

fn generate(d: &Path, positive: &str) {
    let out = noisyor(
        d,
        &["--seed", "5", "generate", "--positive", positive, "--diseases", "30", "--network", "n.json", "--case", "c.json"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

fn code(d: &Path, args: &[&str]) -> Option<i32> {
    noisyor(d, args).status.code()
}

#[test]
fn infer_emits_json_and_csv() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    generate(d, "6");
    let out = noisyor(d, &["--budget", "2", "infer", "--network", "n.json", "--case", "c.json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["spec"]["budget"], 2);
    assert!(v["upper_log_bound"].as_f64().unwrap() >= v["lower_log_bound"].as_f64().unwrap());
    assert_eq!(v["marginals"].as_array().unwrap().len(), 30);

    let out = noisyor(d, &["--format", "csv", "infer", "--network", "n.json", "--case", "c.json"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() > 1);
}

#[test]
fn validation_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    generate(d, "4");
    assert_eq!(code(d, &["--budget", "5", "infer", "--network", "n.json", "--case", "c.json"]), Some(2));
    assert_eq!(code(d, &["--tol", "0", "infer", "--network", "n.json", "--case", "c.json"]), Some(2));
    std::fs::write(d.join("bad.json"), b"{\"diseases\": 3}").unwrap();
    assert_eq!(code(d, &["infer", "--network", "bad.json", "--case", "c.json"]), Some(2));
    assert_eq!(code(d, &["--deterministic", "sample", "--network", "n.json", "--case", "c.json", "--seconds", "1"]), Some(2));
}

#[test]
fn cap_overflow_exits_3() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    generate(d, "30");
    assert_eq!(code(d, &["--budget", "30", "infer", "--network", "n.json", "--case", "c.json"]), Some(3));
}

#[test]
fn non_convergence_exits_4() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    generate(d, "8");
    let out = noisyor(d, &["--max-iter", "1", "--budget", "0", "infer", "--network", "n.json", "--case", "c.json"]);
    assert_eq!(out.status.code(), Some(4));
    // The report is still written.
    assert!(serde_json::from_slice::<serde_json::Value>(&out.stdout).is_ok());
}

#[test]
fn missing_input_is_not_a_validation_error() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(dir.path(), &["infer", "--network", "nope.json", "--case", "nope.json"]), Some(1));
}

#[test]
fn filter_and_rank_consume_sampler_output() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    generate(d, "5");
    let s = noisyor(d, &["--seed", "1", "sample", "--network", "n.json", "--case", "c.json", "--samples", "20000"]);
    assert_eq!(s.status.code(), Some(0));
    std::fs::write(d.join("s.json"), &s.stdout).unwrap();
    let f = noisyor(d, &["--format", "json", "filter", "--network", "n.json", "--case", "c.json", "s.json"]);
    assert_eq!(f.status.code(), Some(0));
    let r = noisyor(d, &["rank", "--reference", "s.json", "--approx", "s.json"]);
    assert_eq!(r.status.code(), Some(0));
    let text = String::from_utf8(r.stdout).unwrap();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[0], cols[1], "identical inputs: {line}");
    }
}
