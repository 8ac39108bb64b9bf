mod common;

use std::collections::BTreeSet;

use noisyor::exact::{brute_force_likelihood, quickscore_posteriors, DEFAULT_BRUTE_FORCE_CAP};
use noisyor::optimizer::{OptimizeMode, OptimizerConfig};
use noisyor::sampler::{bound_filter, run_sampler, SampleBudget, SamplerConfig, DEFAULT_FILTER_SLACK};
use noisyor_bench::experiments::{
    budget_correlations, bound_curve_experiment, partially_exact_baseline, ranking_comparison,
    variational_marginals, Preset,
};
use noisyor_bench::metrics::correlation;
use noisyor_bench::pipeline::{run_case, CaseSpec};

use common::{random_instance, rel_err};

#[test]
fn bound_curve_endpoints_are_order_independent() {
    let config = OptimizerConfig::default();
    for seed in 0..8 {
        let inst = random_instance(seed);
        let n = inst.positive().len();
        let rows = bound_curve_experiment(&inst, &[0, n], 5, seed, &config).unwrap();
        let truth =
            brute_force_likelihood(&inst.net, &inst.priors, inst.positive(), &[], DEFAULT_BRUTE_FORCE_CAP).unwrap();
        // No exact findings: every ordering gives the same bound.
        assert!(rel_err(rows[0].delta_log_bound, rows[0].random_mean) < 1e-9);
        assert!(rows[0].random_sd < 1e-7 * rows[0].random_mean.abs().max(1.0));
        // All exact: the bound is the likelihood.
        assert!(rel_err(rows[1].delta_log_bound, truth) < 1e-9);
        assert!(rel_err(rows[1].random_mean, truth) < 1e-9);
    }
}

#[test]
fn partially_exact_extremes() {
    let config = OptimizerConfig::default();
    let inst = random_instance(21);
    let pos = inst.positive();
    let none = partially_exact_baseline(&inst.net, &inst.priors, &BTreeSet::new(), config.cap).unwrap();
    for (a, b) in none.iter().zip(inst.priors.as_slice()) {
        assert!((a - b).abs() < 1e-12);
    }
    let all = partially_exact_baseline(&inst.net, &inst.priors, pos, config.cap).unwrap();
    let truth = quickscore_posteriors(&inst.net, &inst.priors, pos, config.cap).unwrap();
    assert_eq!(all, truth);
}

#[test]
fn correlation_improves_with_budget_on_average() {
    let config = OptimizerConfig::default();
    let preset = Preset::desk(40, 8);
    let mut sums = [0.0; 3];
    let mut count = 0.0;
    for seed in 0..10 {
        let inst = preset.instance(seed).unwrap();
        let rows = budget_correlations(&inst, &[4, 6, 8], 40, &config).unwrap();
        if rows.iter().any(|r| r.correlation.is_none()) {
            continue;
        }
        for (s, r) in sums.iter_mut().zip(&rows) {
            *s += r.correlation.unwrap();
        }
        count += 1.0;
    }
    assert!(count > 0.0);
    let means: Vec<f64> = sums.iter().map(|s| s / count).collect();
    assert!(means[0] <= means[1] + 1e-3 && means[1] <= means[2] + 1e-3, "{means:?}");
    assert!((means[2] - 1.0).abs() < 1e-9, "all exact should match: {means:?}");
}

#[test]
fn variational_ranking_area_is_below_a_small_sampler() {
    let config = OptimizerConfig::default();
    let preset = Preset::desk(40, 8);
    let (mut var, mut smp) = (0, 0);
    for seed in 0..20 {
        let inst = preset.instance(seed).unwrap();
        let row = ranking_comparison(&inst, seed, 4, 1000, &config).unwrap();
        var += row.variational_area;
        smp += row.sampler_area;
        let full = ranking_comparison(&inst, seed, 8, 1000, &config).unwrap();
        assert_eq!(full.variational_area, 0);
    }
    eprintln!("total false-positive areas: variational {var}, sampler {smp}");
    assert!(var <= smp, "variational {var} vs sampler {smp}");
}

#[test]
fn staged_and_full_marginals_agree_at_full_budget() {
    let config = OptimizerConfig::default();
    let inst = random_instance(4);
    let n = inst.positive().len();
    let (a, _) = variational_marginals(&inst, n, OptimizeMode::Staged, &config).unwrap();
    let (b, _) = variational_marginals(&inst, n, OptimizeMode::Full, &config).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn accepted_sampler_runs_correlate_with_the_truth() {
    let preset = Preset::desk(30, 6);
    let mut accepted = 0;
    for seed in 0..10 {
        let inst = preset.instance(seed).unwrap();
        let spec = CaseSpec {
            budget: 2,
            ..CaseSpec::default()
        };
        let report = run_case(&inst.net, &inst.evidence, &spec, false).unwrap();
        let truth = report.exact.as_ref().unwrap().marginals.clone();
        let cfg = SamplerConfig {
            seed,
            budget: SampleBudget::Samples(20_000),
            ..SamplerConfig::default()
        };
        let est = run_sampler(&inst.net, &inst.priors, inst.positive(), &cfg).unwrap();
        if bound_filter(&est, report.upper_log_bound, report.lower_log_bound, DEFAULT_FILTER_SLACK) {
            accepted += 1;
            let c = correlation(&truth, &est.marginals, truth.len()).unwrap().unwrap();
            assert!(c >= 0.95, "seed {seed}: accepted run correlates {c}");
        }
    }
    assert!(accepted >= 5, "only {accepted}/10 runs accepted");
}
