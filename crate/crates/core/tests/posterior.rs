mod common;

use std::collections::BTreeSet;

use noisyor::exact::{
    brute_force_likelihood, brute_force_posteriors, quickscore_posteriors, ConditionedPriors,
    DEFAULT_BRUTE_FORCE_CAP,
};
use noisyor::expansion::Clamp;
use noisyor::network::{DiseaseNode, NoisyOrNetwork, FindingCPD};
use noisyor::optimizer::{fit_lower, fit_upper, OptimizeMode, OptimizerConfig, LowerPlan, UpperPlan};
use noisyor::posterior::{
    approximate_marginals, default_bin_edges, interval_histogram, interval_posteriors, joint_bounds,
    Family, PlanRef,
};
use noisyor::scheduler::{score_deltas, select_exact_set};

use common::{instance, rel_err, Instance};

const CAP: usize = DEFAULT_BRUTE_FORCE_CAP;

fn fitted(inst: &Instance, order: &[usize], config: &OptimizerConfig) -> (UpperPlan, LowerPlan) {
    let u = fit_upper(&inst.net, &inst.priors, &inst.positive, order, OptimizeMode::Full, config).unwrap();
    let l = fit_lower(&inst.net, &inst.priors, &inst.positive, order, OptimizeMode::Full, config).unwrap();
    (u.plan, l.plan)
}

#[test]
fn intervals_contain_brute_force_posteriors() {
    let config = OptimizerConfig::default();
    for seed in 0..60 {
        let inst = instance(seed, 12, 8);
        let r = score_deltas(&inst.net, &inst.priors, &inst.positive, &config).unwrap();
        let order = select_exact_set(&r.scores, 3);
        let (up, lo) = fitted(&inst, &order, &config);
        let truth = brute_force_posteriors(&inst.net, &inst.priors, &inst.positive, CAP).unwrap();
        let ivs = interval_posteriors(&inst.net, &inst.priors, &up, &lo, &config).unwrap();
        let approx = approximate_marginals(&inst.net, &inst.priors, PlanRef::Upper(&up), &config).unwrap();
        assert_eq!(approx.family, Family::Upper);
        for (j, iv) in ivs.iter().enumerate() {
            assert!(0.0 <= iv.lo && iv.lo <= iv.hi && iv.hi <= 1.0);
            assert!(iv.lo <= truth[j] + 1e-9 && truth[j] <= iv.hi + 1e-9, "seed {seed} disease {j}: {iv:?} vs {}", truth[j]);
            let a = approx.marginals[j];
            assert!(iv.lo <= a + 1e-12 && a <= iv.hi + 1e-12, "seed {seed} disease {j}");
        }
        let h = interval_histogram(&ivs, &default_bin_edges());
        assert_eq!(h.iter().sum::<usize>(), 12);
    }
}

#[test]
fn joint_bounds_bracket_brute_force_joints() {
    let config = OptimizerConfig::default();
    for seed in 0..20 {
        let inst = instance(seed, 10, 6);
        let order: Vec<usize> = inst.positive.iter().copied().take(2).collect();
        let (up, lo) = fitted(&inst, &order, &config);
        let joints = joint_bounds(&inst.net, &inst.priors, &up, &lo, &config).unwrap();
        for (j, jb) in joints.iter().enumerate() {
            for (v, (l, u)) in [(false, (jb.lower.0, jb.upper.0)), (true, (jb.lower.1, jb.upper.1))] {
                let t = brute_force_likelihood(&inst.net, &inst.priors, &inst.positive, &[Clamp { disease: j, value: v }], CAP)
                    .unwrap();
                let slack = 1e-9 * t.abs().max(1.0);
                assert!(l <= t + slack && t <= u + slack, "seed {seed} disease {j} value {v}");
            }
        }
    }
}

#[test]
fn all_exact_plans_collapse_to_the_exact_posterior() {
    let config = OptimizerConfig::default();
    for seed in 0..10 {
        let inst = instance(seed, 10, 6);
        let order: Vec<usize> = inst.positive.iter().copied().collect();
        let (up, lo) = fitted(&inst, &order, &config);
        let exact = quickscore_posteriors(&inst.net, &inst.priors, &inst.positive, CAP).unwrap();
        let ivs = interval_posteriors(&inst.net, &inst.priors, &up, &lo, &config).unwrap();
        for (iv, &p) in ivs.iter().zip(&exact) {
            assert!(iv.width() < 1e-9 && (iv.lo - p).abs() < 1e-9);
        }
        let h = interval_histogram(&ivs, &default_bin_edges());
        assert_eq!(h[0], 10);
        for plan in [PlanRef::Upper(&up), PlanRef::Lower(&lo)] {
            let a = approximate_marginals(&inst.net, &inst.priors, plan, &config).unwrap();
            for (x, &p) in a.marginals.iter().zip(&exact) {
                assert!(rel_err(*x, p) < 1e-9);
            }
        }
    }
}

#[test]
fn widths_shrink_along_nested_frozen_plans() {
    let config = OptimizerConfig::default();
    for seed in 0..10 {
        let inst = instance(seed, 12, 8);
        let (up0, lo0) = fitted(&inst, &[], &config);
        let r = score_deltas(&inst.net, &inst.priors, &inst.positive, &config).unwrap();
        let order = select_exact_set(&r.scores, 8);
        let mut prev: Option<Vec<f64>> = None;
        for b in 0..=8 {
            let up = up0.with_exact(order[..b].iter().copied());
            let lo = lo0.with_exact(order[..b].iter().copied());
            let w: Vec<f64> = interval_posteriors(&inst.net, &inst.priors, &up, &lo, &config)
                .unwrap()
                .iter()
                .map(|iv| iv.width())
                .collect();
            if let Some(p) = &prev {
                for (a, b) in w.iter().zip(p) {
                    assert!(*a <= b + 1e-9, "seed {seed}");
                }
            }
            prev = Some(w);
        }
    }
}

#[test]
fn mismatched_exact_sets_are_rejected() {
    let config = OptimizerConfig::default();
    let inst = instance(2, 8, 4);
    let first = *inst.positive.iter().next().unwrap();
    let up = UpperPlan::initial(&inst.net, &inst.priors, &inst.positive, &[first].into_iter().collect()).unwrap();
    let lo = LowerPlan::initial(&inst.net, &inst.positive, &BTreeSet::new()).unwrap();
    assert!(joint_bounds(&inst.net, &inst.priors, &up, &lo, &config).is_err());
}

#[test]
fn leak_only_joints_are_prior_times_constant() {
    let leak = -(-0.3f64).ln_1p();
    let net = NoisyOrNetwork::new(
        vec![DiseaseNode { id: 0, prior: 0.2 }, DiseaseNode { id: 1, prior: 0.6 }],
        vec![FindingCPD::new(0, leak, vec![])],
    )
    .unwrap();
    let priors = ConditionedPriors::from_network(&net);
    let positive: BTreeSet<usize> = [0].into_iter().collect();
    let config = OptimizerConfig::default();
    let (up, lo) = {
        let inst = Instance { net: net.clone(), priors: priors.clone(), positive: positive.clone() };
        fitted(&inst, &[], &config)
    };
    let joints = joint_bounds(&net, &priors, &up, &lo, &config).unwrap();
    for (j, p) in [0.2f64, 0.6].iter().enumerate() {
        let want1 = p.ln() + 0.3f64.ln();
        assert!((joints[j].upper.1 - want1).abs() < 1e-9 && (joints[j].lower.1 - want1).abs() < 1e-9);
    }
}
