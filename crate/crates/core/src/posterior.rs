//! Posterior marginals from fitted transformed models, and interval bounds
//! on the true marginals built from upper and lower joint bounds.

use crate::error::{Error, Result};
use crate::exact::ConditionedPriors;
use crate::expansion::ExpansionRequest;
use crate::network::NoisyOrNetwork;
use crate::numeric::sigmoid;
use crate::optimizer::{LowerPlan, OptimizerConfig, TransformedModel, UpperPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy)]
pub enum PlanRef<'a> {
    Upper(&'a UpperPlan),
    Lower(&'a LowerPlan),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEstimate {
    pub marginals: Vec<f64>,
    pub family: Family,
}

fn model<'a>(
    network: &'a NoisyOrNetwork,
    priors: &ConditionedPriors,
    plan: PlanRef<'_>,
) -> Result<TransformedModel<'a>> {
    match plan {
        PlanRef::Upper(p) => TransformedModel::upper(network, priors, p),
        PlanRef::Lower(p) => TransformedModel::lower(network, priors, p),
    }
}

/// Marginals of the transformed distribution: exact conditioning on the
/// exact findings under priors tilted by the transformed ones.
pub fn approximate_marginals(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    plan: PlanRef<'_>,
    config: &OptimizerConfig,
) -> Result<PosteriorEstimate> {
    let m = model(network, priors, plan)?.moments(&[], config.cap)?;
    Ok(PosteriorEstimate {
        marginals: m.marginals,
        family: match plan {
            PlanRef::Upper(_) => Family::Upper,
            PlanRef::Lower(_) => Family::Lower,
        },
    })
}

/// Log joint bounds for one disease: `(log P(f+, d_j = 0 | .), log P(f+, d_j = 1 | .))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointBounds {
    pub lower: (f64, f64),
    pub upper: (f64, f64),
}

/// Lower and upper bounds on `P(f+, d_j = v)` for every disease and both
/// values, from one pass over each transformed model.
pub fn joint_bounds(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    upper: &UpperPlan,
    lower: &LowerPlan,
    config: &OptimizerConfig,
) -> Result<Vec<JointBounds>> {
    if upper.exact != lower.exact {
        return Err(Error::InvalidPlan(
            "upper and lower plans must share the exact set".into(),
        ));
    }
    let request = ExpansionRequest {
        marginals: true,
        ..Default::default()
    };
    let up = TransformedModel::upper(network, priors, upper)?.expand(&request, config.cap)?;
    let lo = TransformedModel::lower(network, priors, lower)?
        .expand(&request, config.cap)?;
    Ok(up
        .log_joint
        .iter()
        .zip(&lo.log_joint)
        .map(|(&u, &l)| JointBounds { lower: l, upper: u })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalBound {
    pub lo: f64,
    pub hi: f64,
    /// A lower joint bound vanished, so at least one side is uninformative.
    pub degenerate: bool,
}

impl IntervalBound {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Width of at least 0.9, or degenerate.
    pub fn is_vacuous(&self) -> bool {
        self.degenerate || self.width() >= 0.9
    }
}

/// `lo = L(d_j) / (U(not d_j) + L(d_j))`, `hi = U(d_j) / (U(d_j) + L(not d_j))`.
pub fn interval_from_joints(j: &JointBounds) -> IntervalBound {
    let (l0, l1) = j.lower;
    let (u0, u1) = j.upper;
    let degenerate = l0 == f64::NEG_INFINITY || l1 == f64::NEG_INFINITY;
    let lo = if l1 == f64::NEG_INFINITY {
        0.0
    } else {
        sigmoid(l1 - u0)
    };
    let hi = if l0 == f64::NEG_INFINITY {
        1.0
    } else {
        sigmoid(u1 - l0)
    };
    if lo.is_nan() || hi.is_nan() {
        return IntervalBound {
            lo: 0.0,
            hi: 1.0,
            degenerate: true,
        };
    }
    IntervalBound {
        lo: lo.min(hi),
        hi,
        degenerate,
    }
}

pub fn interval_posteriors(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    upper: &UpperPlan,
    lower: &LowerPlan,
    config: &OptimizerConfig,
) -> Result<Vec<IntervalBound>> {
    Ok(joint_bounds(network, priors, upper, lower, config)?
        .iter()
        .map(interval_from_joints)
        .collect())
}

/// `[0, 0.1, ..., 1.0]`.
pub fn default_bin_edges() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

/// Counts interval widths per bin `[e_k, e_{k+1})`; the last bin is closed.
pub fn interval_histogram(intervals: &[IntervalBound], bin_edges: &[f64]) -> Vec<usize> {
    let bins = bin_edges.len().saturating_sub(1);
    let mut counts = vec![0; bins];
    if bins == 0 {
        return counts;
    }
    for iv in intervals {
        let w = iv.width();
        let k = bin_edges[1..]
            .iter()
            .position(|&e| w < e)
            .unwrap_or(bins - 1);
        counts[k] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_from_equal_joints_is_a_point() {
        let j = JointBounds {
            lower: (0.3f64.ln(), 0.1f64.ln()),
            upper: (0.3f64.ln(), 0.1f64.ln()),
        };
        let iv = interval_from_joints(&j);
        assert!((iv.lo - 0.25).abs() < 1e-15 && (iv.hi - 0.25).abs() < 1e-15);
        assert!(!iv.is_vacuous());
    }

    #[test]
    fn vanishing_lower_joint_gives_vacuous_side() {
        let j = JointBounds {
            lower: (f64::NEG_INFINITY, 0.1f64.ln()),
            upper: (0.3f64.ln(), 0.2f64.ln()),
        };
        let iv = interval_from_joints(&j);
        assert_eq!(iv.hi, 1.0);
        assert!(iv.degenerate && iv.is_vacuous());

        let none = JointBounds {
            lower: (f64::NEG_INFINITY, f64::NEG_INFINITY),
            upper: (f64::NEG_INFINITY, f64::NEG_INFINITY),
        };
        let iv = interval_from_joints(&none);
        assert_eq!((iv.lo, iv.hi), (0.0, 1.0));
    }

    #[test]
    fn histogram_bins() {
        let mk = |lo: f64, hi: f64| IntervalBound {
            lo,
            hi,
            degenerate: false,
        };
        let ivs = [mk(0.5, 0.5), mk(0.0, 1.0), mk(0.2, 0.45), mk(0.1, 0.2)];
        let h = interval_histogram(&ivs, &default_bin_edges());
        assert_eq!(h.len(), 10);
        assert_eq!(h[0], 1);
        assert_eq!(h[1], 1);
        assert_eq!(h[2], 1);
        assert_eq!(h[9], 1);
        assert_eq!(h.iter().sum::<usize>(), 4);
    }
}
