//! Choosing which positive findings to treat exactly.
//!
//! All positive findings are transformed and the upper bound optimized
//! once. For each finding the bound is then recomputed with that single
//! finding reinstated exactly (the other parameters held fixed); the drop in
//! the bound, `delta_i`, measures how poor its transformation is. Findings
//! with the largest drop are treated exactly.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::exact::ConditionedPriors;
use crate::network::NoisyOrNetwork;
use crate::optimizer::{optimize_upper, upper_bound_value, OptimizerConfig, UpperPlan};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaScore {
    pub finding: usize,
    /// `P(f+ | xi) - P(f+ | xi without xi_i)` on the probability scale.
    pub delta: f64,
    /// The same difference divided by `P(f+ | xi)`; ranks identically and
    /// does not underflow.
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaRanking {
    /// Sorted by finding id.
    pub scores: Vec<DeltaScore>,
    /// The optimized all-transformed plan the scores were computed under.
    pub plan: UpperPlan,
    pub log_bound: f64,
}

/// Optimizes the fully transformed upper bound, then scores each positive
/// finding by reinstating it alone. Each reinstatement is a one-finding
/// inclusion-exclusion, linear in the finding's parents.
pub fn score_deltas(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    positive: &BTreeSet<usize>,
    config: &OptimizerConfig,
) -> Result<DeltaRanking> {
    let init = UpperPlan::initial(network, priors, positive, &BTreeSet::new())?;
    let fitted = optimize_upper(network, priors, &init, config)?;
    let scores = deltas_under(network, priors, &fitted.plan, positive, config.cap)?;
    Ok(DeltaRanking {
        scores,
        plan: fitted.plan,
        log_bound: fitted.log_bound,
    })
}

/// Deltas of the still-transformed `candidates` under a fixed plan.
pub fn deltas_under(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    plan: &UpperPlan,
    candidates: &BTreeSet<usize>,
    cap: usize,
) -> Result<Vec<DeltaScore>> {
    let base = upper_bound_value(network, priors, plan, cap)?;
    candidates
        .iter()
        .filter(|i| plan.xi.contains_key(i))
        .map(|&i| {
            let reinstated = upper_bound_value(network, priors, &plan.with_exact([i]), cap)?;
            let relative = -(reinstated - base).exp_m1();
            Ok(DeltaScore {
                finding: i,
                delta: base.exp() * relative,
                relative,
            })
        })
        .collect()
}

/// The `budget` findings with the largest delta, largest first; ties go to
/// the smaller finding id.
pub fn select_exact_set(scores: &[DeltaScore], budget: usize) -> Vec<usize> {
    let mut ranked: Vec<&DeltaScore> = scores.iter().collect();
    ranked.sort_by(|a, b| {
        b.relative
            .total_cmp(&a.relative)
            .then(a.finding.cmp(&b.finding))
    });
    ranked.iter().take(budget).map(|s| s.finding).collect()
}

/// Greedy variant: after each reinstatement the deltas of the remaining
/// transformed findings are recomputed under the same frozen parameters.
pub fn greedy_exact_order(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    ranking: &DeltaRanking,
    budget: usize,
    cap: usize,
) -> Result<Vec<usize>> {
    let mut plan = ranking.plan.clone();
    let mut order = Vec::with_capacity(budget);
    while order.len() < budget && !plan.xi.is_empty() {
        let remaining: BTreeSet<usize> = plan.xi.keys().copied().collect();
        let scores = deltas_under(network, priors, &plan, &remaining, cap)?;
        let pick = select_exact_set(&scores, 1)[0];
        order.push(pick);
        plan = plan.with_exact([pick]);
    }
    Ok(order)
}

/// Uniformly random permutation of the positive findings, fixed by `seed`.
pub fn random_ordering(positive: &BTreeSet<usize>, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = positive.iter().copied().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}
