//! Single-case pipeline: negative findings are absorbed, the exact set is
//! chosen, both bound families are fitted, and marginals and intervals are
//! reported alongside exact values whenever they are affordable.

use std::collections::BTreeSet;
use std::time::Instant;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use noisyor::exact::{absorb_negative, quickscore_likelihood, quickscore_posteriors, ConditionedPriors};
use noisyor::network::{Evidence, NoisyOrNetwork};
use noisyor::optimizer::{fit_lower, fit_upper_warm, BoundResult, LowerPlan, OptimizeMode, OptimizerConfig, UpperPlan};
use noisyor::posterior::{
    approximate_marginals, default_bin_edges, interval_histogram, interval_posteriors, Family, PlanRef,
};
use noisyor::sampler::{run_sampler, SampleBudget, SamplerConfig};
use noisyor::scheduler::{greedy_exact_order, random_ordering, score_deltas, select_exact_set};
use noisyor::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scheduler {
    Delta,
    /// Delta ranking recomputed after each reinstatement.
    Greedy,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FamilyName {
    Upper,
    Lower,
}

impl From<FamilyName> for Family {
    fn from(f: FamilyName) -> Self {
        match f {
            FamilyName::Upper => Family::Upper,
            FamilyName::Lower => Family::Lower,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Staged,
    Full,
}

impl From<ModeName> for OptimizeMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Staged => OptimizeMode::Staged,
            ModeName::Full => OptimizeMode::Full,
        }
    }
}

/// Everything that determines a case report; echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub budget: usize,
    pub family: FamilyName,
    pub scheduler: Scheduler,
    pub mode: ModeName,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    /// Positive-finding count up to which exact values are computed.
    pub exact_limit: usize,
    /// Sampler sample budget; no sampler run when absent.
    pub sampler_samples: Option<u64>,
}

impl Default for CaseSpec {
    fn default() -> Self {
        let opt = OptimizerConfig::default();
        Self {
            budget: 0,
            family: FamilyName::Upper,
            scheduler: Scheduler::Delta,
            mode: ModeName::Staged,
            seed: 0,
            tol: opt.tol,
            max_iter: opt.max_iter,
            exact_limit: 20,
            sampler_samples: None,
        }
    }
}

impl CaseSpec {
    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            ..OptimizerConfig::default()
        }
    }

    fn check(&self, positives: usize, cap: usize) -> Result<()> {
        if self.budget > positives {
            return Err(Error::Domain(format!(
                "budget {} exceeds the {positives} positive findings",
                self.budget
            )));
        }
        if self.budget > cap {
            return Err(Error::CapExceeded {
                what: "exact set",
                size: self.budget,
                cap,
            });
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Domain("tol must be > 0 and max_iter >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaEntry {
    pub finding: usize,
    pub delta: f64,
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalEntry {
    pub lo: f64,
    pub hi: f64,
    pub vacuous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplerSummary {
    pub samples: u64,
    pub log_likelihood: f64,
    pub effective_sample_size: f64,
    pub degenerate: bool,
    pub marginals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactSummary {
    pub log_likelihood: f64,
    pub marginals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timings {
    pub schedule_s: f64,
    pub optimize_s: f64,
    pub posterior_s: f64,
    pub exact_s: Option<f64>,
    pub sampler_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseReport {
    pub spec: CaseSpec,
    pub n_diseases: usize,
    pub positive: BTreeSet<usize>,
    pub negative: BTreeSet<usize>,
    /// Exact findings in reinstatement order.
    pub exact_order: Vec<usize>,
    pub deltas: Option<Vec<DeltaEntry>>,
    pub upper_log_bound: f64,
    pub lower_log_bound: f64,
    pub upper_converged: bool,
    pub lower_converged: bool,
    pub upper_iterations: usize,
    pub lower_iterations: usize,
    /// Approximate posterior marginals from the chosen family.
    pub marginals: Vec<f64>,
    pub intervals: Vec<IntervalEntry>,
    pub interval_histogram: Vec<usize>,
    pub vacuous_intervals: usize,
    pub exact: Option<ExactSummary>,
    pub sampler: Option<SamplerSummary>,
    /// Wall-clock seconds; omitted in deterministic mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

impl CaseReport {
    pub fn converged(&self) -> bool {
        self.upper_converged && self.lower_converged
    }

    /// One row per disease.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("disease,marginal,lo,hi,vacuous,exact\n");
        for j in 0..self.n_diseases {
            let iv = &self.intervals[j];
            let exact = self
                .exact
                .as_ref()
                .map(|e| e.marginals[j].to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{j},{},{},{},{},{exact}\n",
                self.marginals[j], iv.lo, iv.hi, iv.vacuous
            ));
        }
        out
    }
}

/// Fitted plans for one case, before reporting.
pub struct Fitted {
    pub priors: ConditionedPriors,
    pub exact_order: Vec<usize>,
    pub deltas: Option<Vec<DeltaEntry>>,
    pub upper: BoundResult<UpperPlan>,
    pub lower: BoundResult<LowerPlan>,
}

/// Chooses `budget` exact findings in reinstatement order. The delta
/// schedulers also return the all-transformed upper optimum, a warm start
/// for the final fit.
pub fn choose_exact(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    positive: &BTreeSet<usize>,
    budget: usize,
    scheduler: Scheduler,
    seed: u64,
    config: &OptimizerConfig,
) -> Result<(Vec<usize>, Option<Vec<DeltaEntry>>, Option<UpperPlan>)> {
    match scheduler {
        Scheduler::Random => {
            let mut order = random_ordering(positive, seed);
            order.truncate(budget);
            Ok((order, None, None))
        }
        Scheduler::Delta | Scheduler::Greedy => {
            let r = score_deltas(network, priors, positive, config)?;
            let order = if scheduler == Scheduler::Delta {
                select_exact_set(&r.scores, budget)
            } else {
                greedy_exact_order(network, priors, &r, budget, config.cap)?
            };
            let deltas = r
                .scores
                .iter()
                .map(|s| DeltaEntry {
                    finding: s.finding,
                    delta: s.delta,
                    relative: s.relative,
                })
                .collect();
            Ok((order, Some(deltas), Some(r.plan)))
        }
    }
}

pub fn fit_case(network: &NoisyOrNetwork, evidence: &Evidence, spec: &CaseSpec) -> Result<(Fitted, [f64; 2])> {
    evidence.check(network)?;
    let config = spec.optimizer_config();
    spec.check(evidence.positive.len(), config.cap)?;
    let priors = absorb_negative(network, &evidence.negative)?;
    let t = Instant::now();
    let (exact_order, deltas, warm) = choose_exact(
        network,
        &priors,
        &evidence.positive,
        spec.budget,
        spec.scheduler,
        spec.seed,
        &config,
    )?;
    let schedule_s = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let mode = spec.mode.into();
    let upper = fit_upper_warm(
        network,
        &priors,
        &evidence.positive,
        &exact_order,
        mode,
        warm.as_ref(),
        &config,
    )?;
    let lower = fit_lower(network, &priors, &evidence.positive, &exact_order, mode, &config)?;
    let optimize_s = t.elapsed().as_secs_f64();
    Ok((
        Fitted {
            priors,
            exact_order,
            deltas,
            upper,
            lower,
        },
        [schedule_s, optimize_s],
    ))
}

/// Runs the full pipeline for one case. An exact likelihood outside the
/// fitted bounds is reported as an internal error.
pub fn run_case(
    network: &NoisyOrNetwork,
    evidence: &Evidence,
    spec: &CaseSpec,
    with_timings: bool,
) -> Result<CaseReport> {
    let (fitted, [schedule_s, optimize_s]) = fit_case(network, evidence, spec)?;
    let config = spec.optimizer_config();
    let priors = &fitted.priors;

    let t = Instant::now();
    let plan = match spec.family {
        FamilyName::Upper => PlanRef::Upper(&fitted.upper.plan),
        FamilyName::Lower => PlanRef::Lower(&fitted.lower.plan),
    };
    let estimate = approximate_marginals(network, priors, plan, &config)?;
    let ivs = interval_posteriors(network, priors, &fitted.upper.plan, &fitted.lower.plan, &config)?;
    let histogram = interval_histogram(&ivs, &default_bin_edges());
    let posterior_s = t.elapsed().as_secs_f64();

    let (exact, exact_s) = if evidence.positive.len() <= spec.exact_limit {
        let t = Instant::now();
        let ll = quickscore_likelihood(network, priors, &evidence.positive, &[], config.cap)?.log_likelihood;
        let marginals = quickscore_posteriors(network, priors, &evidence.positive, config.cap)?;
        let slack = 1e-9 * ll.abs().max(1.0);
        if ll > fitted.upper.log_bound + slack || ll < fitted.lower.log_bound - slack {
            return Err(Error::Internal(format!(
                "exact log-likelihood {ll} outside bounds [{}, {}]",
                fitted.lower.log_bound, fitted.upper.log_bound
            )));
        }
        (
            Some(ExactSummary {
                log_likelihood: ll,
                marginals,
            }),
            Some(t.elapsed().as_secs_f64()),
        )
    } else {
        (None, None)
    };

    let (sampler, sampler_s) = match spec.sampler_samples {
        Some(n) => {
            let t = Instant::now();
            let cfg = SamplerConfig {
                seed: spec.seed,
                budget: SampleBudget::Samples(n),
                ..SamplerConfig::default()
            };
            let est = run_sampler(network, priors, &evidence.positive, &cfg)?;
            (
                Some(SamplerSummary {
                    samples: est.samples_used,
                    log_likelihood: est.log_likelihood,
                    effective_sample_size: est.effective_sample_size,
                    degenerate: est.degenerate,
                    marginals: est.marginals,
                }),
                Some(t.elapsed().as_secs_f64()),
            )
        }
        None => (None, None),
    };

    Ok(CaseReport {
        spec: spec.clone(),
        n_diseases: network.n_diseases(),
        positive: evidence.positive.clone(),
        negative: evidence.negative.clone(),
        exact_order: fitted.exact_order,
        deltas: fitted.deltas,
        upper_log_bound: fitted.upper.log_bound,
        lower_log_bound: fitted.lower.log_bound,
        upper_converged: fitted.upper.converged,
        lower_converged: fitted.lower.converged,
        upper_iterations: fitted.upper.iterations,
        lower_iterations: fitted.lower.iterations,
        marginals: estimate.marginals,
        vacuous_intervals: ivs.iter().filter(|iv| iv.is_vacuous()).count(),
        intervals: ivs
            .iter()
            .map(|iv| IntervalEntry {
                lo: iv.lo,
                hi: iv.hi,
                vacuous: iv.is_vacuous(),
            })
            .collect(),
        interval_histogram: histogram,
        exact,
        sampler,
        timings: with_timings.then_some(Timings {
            schedule_s,
            optimize_s,
            posterior_s,
            exact_s,
            sampler_s,
        }),
    })
}
