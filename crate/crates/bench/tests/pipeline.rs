mod common;

use noisyor::exact::{brute_force_likelihood, brute_force_posteriors, DEFAULT_BRUTE_FORCE_CAP};
use noisyor::Error;
use noisyor_bench::pipeline::{run_case, CaseSpec, FamilyName, ModeName, Scheduler};

use common::{random_instance, rel_err};

fn spec(budget: usize) -> CaseSpec {
    CaseSpec {
        budget,
        ..CaseSpec::default()
    }
}

#[test]
fn reported_bounds_sandwich_the_brute_force_likelihood() {
    for seed in 0..40 {
        let inst = random_instance(seed);
        let pos = inst.positive();
        let truth = brute_force_likelihood(&inst.net, &inst.priors, pos, &[], DEFAULT_BRUTE_FORCE_CAP).unwrap();
        let slack = 1e-9 * truth.abs().max(1.0);
        for budget in [0, pos.len() / 2] {
            for mode in [ModeName::Staged, ModeName::Full] {
                let s = CaseSpec { mode, ..spec(budget) };
                let r = run_case(&inst.net, &inst.evidence, &s, false).unwrap();
                assert!(r.lower_log_bound <= truth + slack, "seed {seed}: lower {} > {truth}", r.lower_log_bound);
                assert!(r.upper_log_bound >= truth - slack, "seed {seed}: upper {} < {truth}", r.upper_log_bound);
            }
        }
    }
}

#[test]
fn full_budget_gives_exact_marginals_and_tight_bounds() {
    for seed in 0..20 {
        let inst = random_instance(seed);
        let pos = inst.positive();
        let truth = brute_force_posteriors(&inst.net, &inst.priors, pos, DEFAULT_BRUTE_FORCE_CAP).unwrap();
        let ll = brute_force_likelihood(&inst.net, &inst.priors, pos, &[], DEFAULT_BRUTE_FORCE_CAP).unwrap();
        for family in [FamilyName::Upper, FamilyName::Lower] {
            let s = CaseSpec { family, ..spec(pos.len()) };
            let r = run_case(&inst.net, &inst.evidence, &s, false).unwrap();
            for (a, b) in r.marginals.iter().zip(&truth) {
                assert!(rel_err(*a, *b) < 1e-9, "seed {seed}: {a} vs {b}");
            }
            assert!(rel_err(r.upper_log_bound, ll) < 1e-9);
            assert!(rel_err(r.lower_log_bound, ll) < 1e-9);
            assert!(r.intervals.iter().all(|iv| iv.hi - iv.lo < 1e-9));
        }
    }
}

#[test]
fn same_spec_gives_identical_reports() {
    let inst = random_instance(7);
    let s = CaseSpec {
        sampler_samples: Some(2000),
        seed: 3,
        ..spec(inst.positive().len().min(3))
    };
    let a = serde_json::to_vec(&run_case(&inst.net, &inst.evidence, &s, false).unwrap()).unwrap();
    let b = serde_json::to_vec(&run_case(&inst.net, &inst.evidence, &s, false).unwrap()).unwrap();
    assert_eq!(a, b);
    let timed = run_case(&inst.net, &inst.evidence, &s, true).unwrap();
    assert!(timed.timings.is_some());
}

#[test]
fn exact_order_respects_budget_and_scheduler() {
    let inst = random_instance(12);
    let n = inst.positive().len();
    for scheduler in [Scheduler::Delta, Scheduler::Random] {
        for budget in 0..=n {
            let s = CaseSpec { scheduler, ..spec(budget) };
            let r = run_case(&inst.net, &inst.evidence, &s, false).unwrap();
            assert_eq!(r.exact_order.len(), budget);
            assert!(r.exact_order.iter().all(|i| r.positive.contains(i)));
            assert_eq!(r.deltas.is_some(), scheduler == Scheduler::Delta);
        }
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let inst = random_instance(3);
    let n = inst.positive().len();
    let err = run_case(&inst.net, &inst.evidence, &spec(n + 1), false).unwrap_err();
    assert!(matches!(err, Error::Domain(_)), "{err:?}");
    let bad_tol = CaseSpec { tol: 0.0, ..spec(0) };
    assert!(run_case(&inst.net, &inst.evidence, &bad_tol, false).is_err());
}
