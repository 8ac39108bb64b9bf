#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use noisyor::network::{generate_case, generate_synthetic, CaseShape, SyntheticSpec};
use noisyor_bench::experiments::Instance;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random brute-forceable instance: up to 15 diseases and 10 positive
/// findings, with prior, leak and fan-in ranges drawn per instance. About
/// one in five instances has zero leaks.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=15);
    let n_pos = rng.gen_range(1..=10);
    let n_neg = rng.gen_range(0..=3);
    let lo = 10f64.powf(rng.gen_range(-3.0..-1.0));
    let hi = rng.gen_range(lo.max(0.05)..0.6);
    let leak_hi = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..0.2) };
    let spec = SyntheticSpec {
        n_diseases: n,
        n_findings: n_pos + n_neg + rng.gen_range(0..4),
        edges_per_finding: (1, rng.gen_range(1..=n.min(6))),
        prior_range: (lo, hi),
        q_range: (0.05, 0.95),
        leak_range: (0.0, leak_hi),
    };
    let shape = CaseShape {
        n_positive: n_pos,
        n_negative: n_neg,
        n_present: rng.gen_range(0..=2),
    };
    let net = generate_synthetic(&spec, seed).unwrap();
    let evidence = generate_case(&net, &shape, seed ^ 0xa5a5).unwrap();
    Instance::new(net, evidence).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

pub fn noisyor(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisyor"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}
