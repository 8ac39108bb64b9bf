mod common;

use std::collections::BTreeSet;

use noisyor::exact::{brute_force_expectations, brute_force_likelihood, ConditionedPriors, DEFAULT_BRUTE_FORCE_CAP};
use noisyor::network::{DiseaseNode, Edge, FindingCPD, NoisyOrNetwork};
use noisyor::optimizer::{upper_bound_value, OptimizerConfig};
use noisyor::scheduler::{greedy_exact_order, random_ordering, score_deltas, select_exact_set};
use noisyor::transforms::{upper_factor, UpperParam};

use common::{instance, rel_err, transformed_log_joint};

const CAP: usize = DEFAULT_BRUTE_FORCE_CAP;

#[test]
fn deltas_match_brute_force_bound_differences() {
    let config = OptimizerConfig::default();
    for seed in 0..10 {
        let inst = instance(seed, 10, 6);
        let ranking = score_deltas(&inst.net, &inst.priors, &inst.positive, &config).unwrap();
        assert_eq!(ranking.scores.len(), 6);
        let n = inst.net.n_diseases();
        let bound_with_exact = |exact: &BTreeSet<usize>| {
            let factors: Vec<_> = ranking
                .plan
                .xi
                .iter()
                .filter(|(i, _)| !exact.contains(i))
                .map(|(&i, &xi)| upper_factor(inst.net.finding(i).unwrap(), UpperParam::new(xi).unwrap()).unwrap())
                .collect();
            brute_force_expectations(n, &[], CAP, 0, |d| transformed_log_joint(&inst, exact, &factors, d), |_, _| {})
                .unwrap()
                .0
        };
        let base = bound_with_exact(&BTreeSet::new());
        assert!(rel_err(base, ranking.log_bound) < 1e-9);
        for s in &ranking.scores {
            assert!(s.delta >= -1e-12 && s.relative >= -1e-12, "seed {seed}: {s:?}");
            let reinstated = bound_with_exact(&[s.finding].into_iter().collect());
            let direct = base.exp() - reinstated.exp();
            assert!((s.delta - direct).abs() < 1e-9 * base.exp().max(1e-300), "seed {seed}: {} vs {direct}", s.delta);
        }
    }
}

#[test]
fn identical_findings_get_equal_deltas() {
    let theta = |q: f64| -(-q).ln_1p();
    let parents = vec![Edge { disease: 0, theta: theta(0.7) }, Edge { disease: 2, theta: theta(0.4) }];
    let net = NoisyOrNetwork::new(
        (0..4).map(|id| DiseaseNode { id, prior: 0.05 + 0.05 * id as f64 }).collect(),
        vec![
            FindingCPD::new(0, theta(0.02), parents.clone()),
            FindingCPD::new(1, theta(0.02), parents),
            FindingCPD::new(2, theta(0.1), vec![Edge { disease: 1, theta: theta(0.5) }, Edge { disease: 3, theta: theta(0.9) }]),
        ],
    )
    .unwrap();
    let priors = ConditionedPriors::from_network(&net);
    let positive: BTreeSet<usize> = (0..3).collect();
    let r = score_deltas(&net, &priors, &positive, &OptimizerConfig::default()).unwrap();
    assert!((r.scores[0].relative - r.scores[1].relative).abs() < 1e-10);
    assert!((r.scores[0].delta - r.scores[1].delta).abs() < 1e-10);
}

#[test]
fn nested_budgets_tighten_the_frozen_bound() {
    let config = OptimizerConfig::default();
    for seed in 0..10 {
        let inst = instance(seed, 12, 8);
        let ranking = score_deltas(&inst.net, &inst.priors, &inst.positive, &config).unwrap();
        let mut prev = ranking.log_bound;
        for b in 1..=inst.positive.len() {
            let exact = select_exact_set(&ranking.scores, b);
            let plan = ranking.plan.with_exact(exact);
            let v = upper_bound_value(&inst.net, &inst.priors, &plan, CAP).unwrap();
            assert!(v <= prev + 1e-9, "seed {seed} budget {b}");
            prev = v;
        }
        let truth = brute_force_likelihood(&inst.net, &inst.priors, &inst.positive, &[], CAP).unwrap();
        assert!(rel_err(prev, truth) < 1e-9);
    }
}

#[test]
fn selection_extremes() {
    let inst = instance(4, 10, 5);
    let r = score_deltas(&inst.net, &inst.priors, &inst.positive, &OptimizerConfig::default()).unwrap();
    assert!(select_exact_set(&r.scores, 0).is_empty());
    let all = select_exact_set(&r.scores, 5);
    let as_set: BTreeSet<usize> = all.iter().copied().collect();
    assert_eq!(as_set, inst.positive);
    for w in all.windows(2) {
        let d = |i: usize| r.scores.iter().find(|s| s.finding == i).unwrap().relative;
        assert!(d(w[0]) >= d(w[1]));
    }
}

#[test]
fn greedy_order_covers_the_budget() {
    let inst = instance(6, 10, 6);
    let r = score_deltas(&inst.net, &inst.priors, &inst.positive, &OptimizerConfig::default()).unwrap();
    let order = greedy_exact_order(&inst.net, &inst.priors, &r, 4, CAP).unwrap();
    assert_eq!(order.len(), 4);
    assert_eq!(order[0], select_exact_set(&r.scores, 1)[0]);
    let distinct: BTreeSet<usize> = order.iter().copied().collect();
    assert_eq!(distinct.len(), 4);
}

#[test]
fn random_orderings_differ_across_seeds() {
    let pos: BTreeSet<usize> = (0..8).collect();
    let orders: BTreeSet<Vec<usize>> = (0..20).map(|s| random_ordering(&pos, s)).collect();
    assert!(orders.len() > 15);
}
