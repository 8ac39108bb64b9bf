#![allow(dead_code)]

use std::collections::BTreeSet;

use noisyor::exact::{absorb_negative, ConditionedPriors};
use noisyor::network::{generate_case, generate_synthetic, CaseShape, NoisyOrNetwork, SyntheticSpec};
use noisyor::numeric::log1m_exp_neg;
use noisyor::transforms::FactorizedEvidence;

pub struct Instance {
    pub net: NoisyOrNetwork,
    pub priors: ConditionedPriors,
    pub positive: BTreeSet<usize>,
}

/// Random desk-scale instance. Priors are drawn from a wider range than the
/// default generator so that posteriors are far from trivial.
pub fn instance(seed: u64, n_diseases: usize, n_positive: usize) -> Instance {
    let spec = SyntheticSpec {
        prior_range: (0.01, 0.4),
        leak_range: (0.0, 0.1),
        ..SyntheticSpec::small(n_diseases, n_positive + 4, 4)
    };
    let net = generate_synthetic(&spec, seed).unwrap();
    let shape = CaseShape {
        n_positive,
        n_negative: 2,
        n_present: 2,
    };
    let case = generate_case(&net, &shape, seed ^ 0x9e37_79b9).unwrap();
    let priors = absorb_negative(&net, &case.negative).unwrap();
    Instance {
        net,
        priors,
        positive: case.positive,
    }
}

pub fn log_prior(priors: &[f64], d: &[bool]) -> f64 {
    priors
        .iter()
        .zip(d)
        .map(|(&p, &on)| if on { p.ln() } else { (-p).ln_1p() })
        .sum()
}

/// `log P(d) + sum_exact log P(f+|d) + sum log factor(d)`.
pub fn transformed_log_joint(
    inst: &Instance,
    exact: &BTreeSet<usize>,
    factors: &[FactorizedEvidence],
    d: &[bool],
) -> f64 {
    let mut lw = log_prior(inst.priors.as_slice(), d);
    for &i in exact {
        let x = inst.net.finding(i).unwrap().activation(d);
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        lw += log1m_exp_neg(x);
    }
    lw + factors.iter().map(|f| f.log_value(d)).sum::<f64>()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }
}
