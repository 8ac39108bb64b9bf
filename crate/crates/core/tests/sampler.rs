mod common;

use std::collections::BTreeSet;

use noisyor::exact::{brute_force_likelihood, brute_force_posteriors, DEFAULT_BRUTE_FORCE_CAP};
use noisyor::sampler::{bound_filter, run_sampler, SampleBudget, SamplerConfig, DEFAULT_FILTER_SLACK};

use common::instance;

const CAP: usize = DEFAULT_BRUTE_FORCE_CAP;

fn config(seed: u64, samples: u64) -> SamplerConfig {
    SamplerConfig {
        seed,
        budget: SampleBudget::Samples(samples),
        ..SamplerConfig::default()
    }
}

fn max_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn without_evidence_marginals_are_priors() {
    let inst = instance(1, 10, 3);
    let n = 20_000u64;
    for mb in [false, true] {
        let cfg = SamplerConfig {
            markov_blanket_scoring: mb,
            self_importance: false,
            ..config(3, n)
        };
        let est = run_sampler(&inst.net, &inst.priors, &BTreeSet::new(), &cfg).unwrap();
        assert_eq!(est.log_likelihood, 0.0);
        assert!((est.effective_sample_size - n as f64).abs() < 1e-6);
        for (m, &p) in est.marginals.iter().zip(inst.priors.as_slice()) {
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((m - p).abs() <= 3.0 * sigma + 1e-12);
        }
    }
}

#[test]
fn self_importance_without_evidence_stays_near_priors() {
    let inst = instance(1, 10, 3);
    let est = run_sampler(&inst.net, &inst.priors, &BTreeSet::new(), &config(3, 20_000)).unwrap();
    assert!(est.log_likelihood.abs() < 0.05);
    for (m, &p) in est.marginals.iter().zip(inst.priors.as_slice()) {
        assert!((m - p).abs() < 0.02);
    }
}

#[test]
fn runs_are_deterministic_per_seed() {
    let inst = instance(2, 10, 5);
    let a = run_sampler(&inst.net, &inst.priors, &inst.positive, &config(7, 5000)).unwrap();
    let b = run_sampler(&inst.net, &inst.priors, &inst.positive, &config(7, 5000)).unwrap();
    let c = run_sampler(&inst.net, &inst.priors, &inst.positive, &config(8, 5000)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.effective_sample_size <= a.samples_used as f64);
    assert!(a.marginals.iter().all(|m| (0.0..=1.0).contains(m)));
}

#[test]
fn likelihood_estimator_is_unbiased() {
    let inst = instance(3, 10, 4);
    let truth = brute_force_likelihood(&inst.net, &inst.priors, &inst.positive, &[], CAP).unwrap().exp();
    let estimates: Vec<f64> = (0..200)
        .map(|s| {
            let cfg = SamplerConfig {
                self_importance: false,
                ..config(s, 200)
            };
            run_sampler(&inst.net, &inst.priors, &inst.positive, &cfg).unwrap().log_likelihood.exp()
        })
        .collect();
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let sd = (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((mean - truth).abs() <= 3.0 * sd / n.sqrt(), "{mean} vs {truth} (sd {sd})");
}

#[test]
fn error_shrinks_with_budget() {
    let inst = instance(4, 10, 6);
    let truth = brute_force_posteriors(&inst.net, &inst.priors, &inst.positive, CAP).unwrap();
    let median = |samples: u64| {
        let mut errs: Vec<f64> = (0..20)
            .map(|s| {
                let est = run_sampler(&inst.net, &inst.priors, &inst.positive, &config(s, samples)).unwrap();
                max_err(&est.marginals, &truth)
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        0.5 * (errs[9] + errs[10])
    };
    assert!(median(100_000) < median(1_000));
}

#[test]
fn sampler_variants_converge() {
    let inst = instance(5, 10, 6);
    let truth = brute_force_posteriors(&inst.net, &inst.priors, &inst.positive, CAP).unwrap();
    for (mb, si) in [(false, false), (true, false), (false, true), (true, true)] {
        let cfg = SamplerConfig {
            markov_blanket_scoring: mb,
            self_importance: si,
            ..config(9, 200_000)
        };
        let est = run_sampler(&inst.net, &inst.priors, &inst.positive, &cfg).unwrap();
        assert!(max_err(&est.marginals, &truth) < 0.02, "mb={mb} si={si}");
    }
}

#[test]
fn wall_clock_budget_stops() {
    let inst = instance(6, 10, 6);
    let cfg = SamplerConfig {
        budget: SampleBudget::WallClock(std::time::Duration::from_millis(20)),
        ..SamplerConfig::default()
    };
    let est = run_sampler(&inst.net, &inst.priors, &inst.positive, &cfg).unwrap();
    assert!(est.samples_used > 0);
}

#[test]
fn filter_against_exact_value() {
    let inst = instance(7, 10, 6);
    let truth = brute_force_likelihood(&inst.net, &inst.priors, &inst.positive, &[], CAP).unwrap();
    let mut est = run_sampler(&inst.net, &inst.priors, &inst.positive, &config(1, 100)).unwrap();
    est.log_likelihood = truth;
    assert!(bound_filter(&est, truth + 0.1, truth - 0.1, DEFAULT_FILTER_SLACK));
    est.log_likelihood = truth - 0.2 - DEFAULT_FILTER_SLACK - 1e-9;
    assert!(!bound_filter(&est, truth + 0.1, truth - 0.2, DEFAULT_FILTER_SLACK));
}
