//! Likelihood-weighted sampling with optional Markov-blanket scoring and
//! self-importance sampling.
//!
//! Diseases are drawn independently from an importance distribution
//! (initially the conditioned priors); each draw is weighted by the positive
//! findings' likelihood times the prior/importance ratio. Self-importance
//! sampling periodically moves the importance distribution toward the
//! current marginal estimates.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::ConditionedPriors;
use crate::network::{FindingCPD, NoisyOrNetwork};
use crate::numeric::{log1m_exp_neg, LogWeightedSums};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleBudget {
    Samples(u64),
    /// Runs until the wall-clock limit; not reproducible across runs.
    WallClock(Duration),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub seed: u64,
    pub budget: SampleBudget,
    pub markov_blanket_scoring: bool,
    pub self_importance: bool,
    /// Samples between importance-distribution refreshes.
    pub si_update_period: u64,
    /// Weight on the previous importance distribution when refreshing.
    pub si_smoothing: f64,
    /// Importance probabilities are kept in `[floor, 1 - floor]`.
    pub si_floor: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            budget: SampleBudget::Samples(100_000),
            markov_blanket_scoring: true,
            self_importance: true,
            si_update_period: 1000,
            si_smoothing: 0.5,
            si_floor: 1e-4,
        }
    }
}

impl SamplerConfig {
    fn check(&self) -> Result<()> {
        match self.budget {
            SampleBudget::Samples(0) => return Err(Error::Domain("sample budget must be > 0".into())),
            SampleBudget::WallClock(d) if d.is_zero() => {
                return Err(Error::Domain("time budget must be > 0".into()))
            }
            _ => {}
        }
        if self.si_update_period == 0 {
            return Err(Error::Domain("si_update_period must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.si_smoothing) {
            return Err(Error::Domain("si_smoothing must lie in [0, 1)".into()));
        }
        if !(self.si_floor > 0.0 && self.si_floor < 0.5) {
            return Err(Error::Domain("si_floor must lie in (0, 0.5)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplerEstimate {
    pub marginals: Vec<f64>,
    /// Log of the mean importance weight, estimating `log P(f+)`.
    pub log_likelihood: f64,
    pub samples_used: u64,
    pub effective_sample_size: f64,
    /// Every weight was zero; the marginals fall back to the priors.
    pub degenerate: bool,
}

fn log_bernoulli(p: f64, on: bool) -> f64 {
    if on {
        p.ln()
    } else {
        (-p).ln_1p()
    }
}

fn log_p_pos(x: f64) -> f64 {
    if x > 0.0 {
        log1m_exp_neg(x)
    } else {
        f64::NEG_INFINITY
    }
}

pub fn run_sampler(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    positive: &BTreeSet<usize>,
    config: &SamplerConfig,
) -> Result<SamplerEstimate> {
    config.check()?;
    let n = network.n_diseases();
    let findings: Vec<&FindingCPD> = positive
        .iter()
        .map(|&i| network.finding(i))
        .collect::<Result<_>>()?;
    // Per disease: (index into `findings`, theta) for its positive children.
    let mut blanket: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (k, f) in findings.iter().enumerate() {
        for e in &f.parents {
            blanket[e.disease].push((k, e.theta));
        }
    }
    let prior = priors.as_slice();
    let mut importance = prior.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut total = LogWeightedSums::new(n);
    let mut d = vec![false; n];
    let mut x = vec![0.0; findings.len()];
    let mut values = vec![0.0; n];
    let started = Instant::now();
    let mut drawn: u64 = 0;

    loop {
        match config.budget {
            SampleBudget::Samples(s) if drawn >= s => break,
            SampleBudget::WallClock(t) if drawn > 0 && drawn % 64 == 0 && started.elapsed() >= t => {
                break
            }
            _ => {}
        }
        drawn += 1;

        let mut log_w = 0.0;
        for j in 0..n {
            d[j] = rng.gen::<f64>() < importance[j];
            log_w += log_bernoulli(prior[j], d[j]) - log_bernoulli(importance[j], d[j]);
        }
        for (k, f) in findings.iter().enumerate() {
            x[k] = f.activation(&d);
            log_w += log_p_pos(x[k]);
        }

        if config.markov_blanket_scoring {
            for j in 0..n {
                // Findings' activations with d_j forced on and off.
                let mut on = prior[j].ln();
                let mut off = (-prior[j]).ln_1p();
                for &(k, theta) in &blanket[j] {
                    let without = if d[j] { x[k] - theta } else { x[k] };
                    on += log_p_pos(without + theta);
                    off += log_p_pos(without);
                }
                values[j] = if on == f64::NEG_INFINITY {
                    0.0
                } else {
                    1.0 / (1.0 + (off - on).exp())
                };
            }
        } else {
            for j in 0..n {
                values[j] = f64::from(u8::from(d[j]));
            }
        }
        total.push(log_w, &values);
        if config.self_importance && drawn % config.si_update_period == 0 {
            if let Some(est) = total.means() {
                let a = config.si_smoothing;
                let (lo, hi) = (config.si_floor, 1.0 - config.si_floor);
                for (imp, e) in importance.iter_mut().zip(est) {
                    *imp = (a * *imp + (1.0 - a) * e).clamp(lo, hi);
                }
            }
        }
    }

    let log_likelihood = total.log_total() - (drawn as f64).ln();
    let (marginals, degenerate) = match total.means() {
        Some(m) => (m, false),
        None => (prior.to_vec(), true),
    };
    Ok(SamplerEstimate {
        marginals,
        log_likelihood,
        samples_used: drawn,
        effective_sample_size: total.effective_sample_size(),
        degenerate,
    })
}

/// Accepts a sampler run whose likelihood estimate lies within `slack`
/// nats of the variational bounds.
pub fn bound_filter(
    estimate: &SamplerEstimate,
    upper_log_bound: f64,
    lower_log_bound: f64,
    slack: f64,
) -> bool {
    let l = estimate.log_likelihood;
    l >= lower_log_bound - slack && l <= upper_log_bound + slack
}

pub const DEFAULT_FILTER_SLACK: f64 = 0.5;
