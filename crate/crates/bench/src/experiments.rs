//! Seeded experiment sweeps on synthetic cases. Every function is a pure
//! function of its arguments except for the wall-clock fields.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use noisyor::exact::{absorb_negative, quickscore_posteriors, ConditionedPriors};
use noisyor::network::{generate_case, generate_synthetic, CaseShape, Evidence, NoisyOrNetwork, SyntheticSpec};
use noisyor::optimizer::{fit_upper, fit_upper_warm, OptimizeMode, OptimizerConfig};
use noisyor::posterior::{approximate_marginals, PlanRef};
use noisyor::sampler::{run_sampler, SampleBudget, SamplerConfig};
use noisyor::scheduler::{random_ordering, score_deltas, select_exact_set};
use noisyor::Result;

use crate::metrics::{correlation, ranking_curve};
use crate::pipeline::{run_case, CaseSpec};

/// Shape of the desk-scale instances used by the sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub network: SyntheticSpec,
    pub case: CaseShape,
}

impl Preset {
    /// Small networks whose posteriors brute force can check. Priors are
    /// drawn wider than the full-scale default so that evidence matters.
    pub fn desk(n_diseases: usize, n_positive: usize) -> Self {
        Self {
            network: SyntheticSpec {
                prior_range: (0.01, 0.3),
                leak_range: (0.0, 0.1),
                ..SyntheticSpec::small(n_diseases, n_positive + 6, 4)
            },
            case: CaseShape {
                n_positive,
                n_negative: 3,
                n_present: 2,
            },
        }
    }

    /// Full-scale analog of the clinical cases: 600 diseases, 4000 findings.
    pub fn full(n_positive: usize, n_negative: usize) -> Self {
        Self {
            network: SyntheticSpec::default(),
            case: CaseShape {
                n_positive,
                n_negative,
                n_present: 4,
            },
        }
    }

    pub fn instance(&self, seed: u64) -> Result<Instance> {
        let net = generate_synthetic(&self.network, seed)?;
        let evidence = generate_case(&net, &self.case, seed.wrapping_add(0x5eed))?;
        Instance::new(net, evidence)
    }
}

pub struct Instance {
    pub net: NoisyOrNetwork,
    pub evidence: Evidence,
    pub priors: ConditionedPriors,
}

impl Instance {
    pub fn new(net: NoisyOrNetwork, evidence: Evidence) -> Result<Self> {
        evidence.check(&net)?;
        let priors = absorb_negative(&net, &evidence.negative)?;
        Ok(Self {
            net,
            evidence,
            priors,
        })
    }

    pub fn positive(&self) -> &BTreeSet<usize> {
        &self.evidence.positive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCurveRow {
    pub budget: usize,
    pub delta_log_bound: f64,
    pub random_mean: f64,
    pub random_sd: f64,
}

/// Upper log-bound per budget under the delta ordering and under
/// `n_random_orders` random orderings (mean and sample sd). Parameters are
/// fully re-optimized at every budget.
pub fn bound_curve_experiment(
    inst: &Instance,
    budgets: &[usize],
    n_random_orders: usize,
    seed: u64,
    config: &OptimizerConfig,
) -> Result<Vec<BoundCurveRow>> {
    let positive = inst.positive();
    let ranking = score_deltas(&inst.net, &inst.priors, positive, config)?;
    let delta_order = select_exact_set(&ranking.scores, positive.len());
    let random_orders: Vec<Vec<usize>> = (0..n_random_orders as u64)
        .map(|r| random_ordering(positive, seed.wrapping_mul(1000).wrapping_add(r)))
        .collect();
    let bound = |order: &[usize]| -> Result<f64> {
        Ok(fit_upper(&inst.net, &inst.priors, positive, order, OptimizeMode::Full, config)?.log_bound)
    };
    budgets
        .iter()
        .map(|&b| {
            let b = b.min(positive.len());
            let delta_log_bound = bound(&delta_order[..b])?;
            let rs = random_orders
                .iter()
                .map(|o| bound(&o[..b]))
                .collect::<Result<Vec<f64>>>()?;
            let n = rs.len() as f64;
            let mean = rs.iter().sum::<f64>() / n;
            let sd = if rs.len() > 1 {
                (rs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            Ok(BoundCurveRow {
                budget: b,
                delta_log_bound,
                random_mean: mean,
                random_sd: sd,
            })
        })
        .collect()
}

/// Posteriors conditioned on the exact findings alone; the transformed
/// findings are ignored.
pub fn partially_exact_baseline(
    net: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    exact_set: &BTreeSet<usize>,
    cap: usize,
) -> Result<Vec<f64>> {
    quickscore_posteriors(net, priors, exact_set, cap)
}

/// Variational marginals with `budget` delta-chosen exact findings, and the
/// chosen set.
pub fn variational_marginals(
    inst: &Instance,
    budget: usize,
    mode: OptimizeMode,
    config: &OptimizerConfig,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let positive = inst.positive();
    let ranking = score_deltas(&inst.net, &inst.priors, positive, config)?;
    let order = select_exact_set(&ranking.scores, budget);
    let fit = fit_upper_warm(&inst.net, &inst.priors, positive, &order, mode, Some(&ranking.plan), config)?;
    let m = approximate_marginals(&inst.net, &inst.priors, PlanRef::Upper(&fit.plan), config)?;
    Ok((m.marginals, order))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialRow {
    pub seed: u64,
    pub variational_area: usize,
    pub partial_area: usize,
    pub variational_false_negatives: usize,
    pub partial_false_negatives: usize,
}

/// False-positive curve areas of the variational and partially-exact
/// methods against the exact posteriors, with the same exact set.
pub fn partial_comparison(inst: &Instance, seed: u64, budget: usize, config: &OptimizerConfig) -> Result<PartialRow> {
    let truth = quickscore_posteriors(&inst.net, &inst.priors, inst.positive(), config.cap)?;
    let (var, order) = variational_marginals(inst, budget, OptimizeMode::Staged, config)?;
    let exact_set: BTreeSet<usize> = order.into_iter().collect();
    let partial = partially_exact_baseline(&inst.net, &inst.priors, &exact_set, config.cap)?;
    let n = truth.len();
    let cv = ranking_curve(&truth, &var, n)?;
    let cp = ranking_curve(&truth, &partial, n)?;
    Ok(PartialRow {
        seed,
        variational_area: cv.false_positive_area(),
        partial_area: cp.false_positive_area(),
        variational_false_negatives: cv.false_negatives.iter().sum(),
        partial_false_negatives: cp.false_negatives.iter().sum(),
    })
}

/// How the sampler's budget is matched to the variational run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Matching {
    /// Same wall-clock time as the variational run (not reproducible).
    WallClock,
    /// A fixed sample count (reproducible).
    Samples(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeAccuracyRow {
    pub seed: u64,
    pub variational_correlation: Option<f64>,
    pub sampler_correlation: Option<f64>,
    pub sampler_samples: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variational_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampler_s: Option<f64>,
}

/// Top-`k` correlation with the exact posteriors of the variational method
/// and of the sampler given a matched budget.
pub fn time_accuracy(
    inst: &Instance,
    seed: u64,
    budget: usize,
    top_k: usize,
    matching: Matching,
    config: &OptimizerConfig,
) -> Result<TimeAccuracyRow> {
    let truth = quickscore_posteriors(&inst.net, &inst.priors, inst.positive(), config.cap)?;
    let k = top_k.min(truth.len());
    let t = Instant::now();
    let (var, _) = variational_marginals(inst, budget, OptimizeMode::Staged, config)?;
    let var_s = t.elapsed();
    let sampler_budget = match matching {
        Matching::WallClock => SampleBudget::WallClock(var_s.max(Duration::from_micros(1))),
        Matching::Samples(n) => SampleBudget::Samples(n),
    };
    let cfg = SamplerConfig {
        seed,
        budget: sampler_budget,
        ..SamplerConfig::default()
    };
    let t = Instant::now();
    let est = run_sampler(&inst.net, &inst.priors, inst.positive(), &cfg)?;
    let sampler_s = t.elapsed();
    let timed = matching == Matching::WallClock;
    Ok(TimeAccuracyRow {
        seed,
        variational_correlation: correlation(&truth, &var, k)?,
        sampler_correlation: correlation(&truth, &est.marginals, k)?,
        sampler_samples: est.samples_used,
        variational_s: timed.then_some(var_s.as_secs_f64()),
        sampler_s: timed.then_some(sampler_s.as_secs_f64()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingRow {
    pub seed: u64,
    pub variational_area: usize,
    pub sampler_area: usize,
}

/// False-positive areas of the variational method and of a fixed-size
/// sampler run.
pub fn ranking_comparison(
    inst: &Instance,
    seed: u64,
    budget: usize,
    samples: u64,
    config: &OptimizerConfig,
) -> Result<RankingRow> {
    let truth = quickscore_posteriors(&inst.net, &inst.priors, inst.positive(), config.cap)?;
    let (var, _) = variational_marginals(inst, budget, OptimizeMode::Staged, config)?;
    let cfg = SamplerConfig {
        seed,
        budget: SampleBudget::Samples(samples),
        ..SamplerConfig::default()
    };
    let est = run_sampler(&inst.net, &inst.priors, inst.positive(), &cfg)?;
    let n = truth.len();
    Ok(RankingRow {
        seed,
        variational_area: ranking_curve(&truth, &var, n)?.false_positive_area(),
        sampler_area: ranking_curve(&truth, &est.marginals, n)?.false_positive_area(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub budget: usize,
    pub correlation: Option<f64>,
}

/// Top-`k` correlation of the staged variational marginals with the exact
/// posteriors at each budget.
pub fn budget_correlations(
    inst: &Instance,
    budgets: &[usize],
    top_k: usize,
    config: &OptimizerConfig,
) -> Result<Vec<CorrelationRow>> {
    let truth = quickscore_posteriors(&inst.net, &inst.priors, inst.positive(), config.cap)?;
    let k = top_k.min(truth.len());
    budgets
        .iter()
        .map(|&budget| {
            let (var, _) = variational_marginals(inst, budget, OptimizeMode::Staged, config)?;
            Ok(CorrelationRow {
                budget,
                correlation: correlation(&truth, &var, k)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalRow {
    pub vacuous: usize,
    pub mean_width: f64,
    /// Width counts over `[0, 0.1), ..., [0.9, 1.0]`.
    pub histogram: Vec<usize>,
    /// Whether every exact posterior lies inside its interval.
    pub contained: bool,
}

/// Interval-bound summary of one case under `spec`.
pub fn interval_summary(inst: &Instance, spec: &CaseSpec) -> Result<IntervalRow> {
    let spec = CaseSpec {
        sampler_samples: None,
        exact_limit: usize::MAX,
        ..spec.clone()
    };
    let report = run_case(&inst.net, &inst.evidence, &spec, false)?;
    let exact = report.exact.as_ref().map(|e| e.marginals.as_slice()).unwrap_or_default();
    let contained = report
        .intervals
        .iter()
        .zip(exact)
        .all(|(iv, &p)| iv.lo - 1e-12 <= p && p <= iv.hi + 1e-12);
    let n = report.intervals.len().max(1) as f64;
    Ok(IntervalRow {
        vacuous: report.vacuous_intervals,
        mean_width: report.intervals.iter().map(|iv| iv.hi - iv.lo).sum::<f64>() / n,
        histogram: report.interval_histogram,
        contained,
    })
}

/// Serializes rows as CSV with the given header; each row supplies its
/// already formatted fields.
pub fn to_csv<T>(header: &str, rows: &[T], fields: impl Fn(&T) -> Vec<String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&fields(r).join(","));
        out.push('\n');
    }
    out
}

pub fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
