//! Exact inference: negative-evidence absorption, brute-force enumeration
//! (the oracle), and inclusion-exclusion over positive findings.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::expansion::{expand, Cancellation, Clamp, ExpansionRequest, TiltedPriors};
use crate::network::{FindingCPD, NoisyOrNetwork};
use crate::numeric::{log1m_exp_neg, sigmoid, LogWeightedSums};

pub const DEFAULT_BRUTE_FORCE_CAP: usize = 22;
pub const DEFAULT_QUICKSCORE_CAP: usize = 24;

/// Disease priors after absorbing negative findings, `P(d_j = 1 | f-)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedPriors(Vec<f64>);

impl ConditionedPriors {
    /// The network's own priors, with no evidence absorbed.
    pub fn from_network(network: &NoisyOrNetwork) -> Self {
        Self(network.priors())
    }

    pub fn new(priors: Vec<f64>) -> Result<Self> {
        if let Some((j, p)) = priors.iter().enumerate().find(|(_, p)| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::Domain(format!("conditioned prior {p} for disease {j} not in (0, 1)")));
        }
        Ok(Self(priors))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Folds negative findings into the priors. The leak terms are common to
/// every configuration and cancel on normalization.
pub fn absorb_negative(
    network: &NoisyOrNetwork,
    negative: &BTreeSet<usize>,
) -> Result<ConditionedPriors> {
    let mut shift = vec![0.0; network.n_diseases()];
    for &i in negative {
        for e in &network.finding(i)?.parents {
            shift[e.disease] += e.theta;
        }
    }
    let priors = network
        .diseases()
        .iter()
        .zip(&shift)
        .map(|(d, &s)| {
            if s == 0.0 {
                d.prior
            } else {
                sigmoid(d.prior.ln() - (-d.prior).ln_1p() - s)
            }
        })
        .collect();
    Ok(ConditionedPriors(priors))
}

fn positive_findings<'a>(
    network: &'a NoisyOrNetwork,
    positive: &BTreeSet<usize>,
) -> Result<Vec<&'a FindingCPD>> {
    positive.iter().map(|&i| network.finding(i)).collect()
}

fn check_clamps(n: usize, clamps: &[Clamp]) -> Result<Vec<Option<bool>>> {
    let mut out = vec![None; n];
    for c in clamps {
        let slot = out.get_mut(c.disease).ok_or(Error::UnknownDisease(c.disease))?;
        if slot.is_some() {
            return Err(Error::Domain(format!("disease {} clamped twice", c.disease)));
        }
        *slot = Some(c.value);
    }
    Ok(out)
}

/// Sums `exp(log_weight(d))` over every configuration consistent with the
/// clamps, and the weighted means of `values(d)`. Oracle only: cost is
/// `2^(unclamped diseases)`.
pub fn brute_force_expectations<W, V>(
    n_diseases: usize,
    clamps: &[Clamp],
    cap: usize,
    width: usize,
    mut log_weight: W,
    mut values: V,
) -> Result<(f64, Option<Vec<f64>>)>
where
    W: FnMut(&[bool]) -> f64,
    V: FnMut(&[bool], &mut [f64]),
{
    let fixed = check_clamps(n_diseases, clamps)?;
    let free: Vec<usize> = (0..n_diseases).filter(|&j| fixed[j].is_none()).collect();
    if free.len() > cap {
        return Err(Error::CapExceeded {
            what: "unclamped disease count",
            size: free.len(),
            cap,
        });
    }
    let mut d: Vec<bool> = fixed.iter().map(|v| v.unwrap_or(false)).collect();
    let mut acc = LogWeightedSums::new(width);
    let mut buf = vec![0.0; width];
    for mask in 0u64..(1u64 << free.len()) {
        for (k, &j) in free.iter().enumerate() {
            d[j] = mask >> k & 1 == 1;
        }
        let lw = log_weight(&d);
        if width > 0 && lw > f64::NEG_INFINITY {
            values(&d, &mut buf);
        }
        acc.push(lw, &buf);
    }
    Ok((acc.log_total(), acc.means()))
}

fn log_joint(
    priors: &[f64],
    positive: &[&FindingCPD],
    d: &[bool],
) -> f64 {
    let mut lw: f64 = priors
        .iter()
        .zip(d)
        .map(|(&p, &on)| if on { p.ln() } else { (-p).ln_1p() })
        .sum();
    for f in positive {
        let x = f.activation(d);
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        lw += log1m_exp_neg(x);
    }
    lw
}

/// `log sum_d prod_{i in f+} P(f_i+ | d) prod_j P(d_j)` by enumeration; with
/// clamps, the joint `log P(f+, clamped diseases)`.
pub fn brute_force_likelihood(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    positive: &BTreeSet<usize>,
    clamps: &[Clamp],
    cap: usize,
) -> Result<f64> {
    let fs = positive_findings(network, positive)?;
    let p = priors.as_slice();
    let (log_total, _) = brute_force_expectations(
        network.n_diseases(),
        clamps,
        cap,
        0,
        |d| log_joint(p, &fs, d),
        |_, _| {},
    )?;
    Ok(log_total)
}

/// `P(d_j = 1 | f+)` for every disease by enumeration.
pub fn brute_force_posteriors(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    positive: &BTreeSet<usize>,
    cap: usize,
) -> Result<Vec<f64>> {
    let fs = positive_findings(network, positive)?;
    let p = priors.as_slice();
    let n = network.n_diseases();
    let (_, means) = brute_force_expectations(
        n,
        &[],
        cap,
        n,
        |d| log_joint(p, &fs, d),
        |d, out| {
            for (o, &on) in out.iter_mut().zip(d) {
                *o = f64::from(u8::from(on));
            }
        },
    )?;
    means.ok_or(Error::NumericalBreakdown(0.0))
}

/// Log-likelihood with cancellation diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodResult {
    pub log_likelihood: f64,
    pub cancellation: Cancellation,
}

/// Inclusion-exclusion (Quickscore) likelihood, exponential in `|f+|` and
/// linear in the diseases per subset.
pub fn quickscore_likelihood(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    positive: &BTreeSet<usize>,
    clamps: &[Clamp],
    cap: usize,
) -> Result<LikelihoodResult> {
    let fs = positive_findings(network, positive)?;
    let tilted = TiltedPriors::new(priors.as_slice());
    let out = expand(
        &tilted,
        &fs,
        &ExpansionRequest {
            clamps,
            ..Default::default()
        },
        cap,
    )?;
    Ok(LikelihoodResult {
        log_likelihood: out.log_mass,
        cancellation: out.cancellation,
    })
}

/// Exact posteriors by inclusion-exclusion. Each marginal is the ratio of
/// the likelihood with `d_j` clamped on to the unclamped likelihood; all
/// numerators are accumulated in a single pass over the subsets.
pub fn quickscore_posteriors(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    positive: &BTreeSet<usize>,
    cap: usize,
) -> Result<Vec<f64>> {
    let fs = positive_findings(network, positive)?;
    let tilted = TiltedPriors::new(priors.as_slice());
    let out = expand(
        &tilted,
        &fs,
        &ExpansionRequest {
            marginals: true,
            ..Default::default()
        },
        cap,
    )?;
    Ok(out.marginals)
}
