//! Variational bounds on a single positive finding.
//!
//! Writing `P(f_i = 1 | d) = exp(f(x))` with `f(x) = log(1 - e^{-x})` and
//! `x = theta_i0 + sum_j theta_ij d_j`, concavity of `f` gives
//!
//! * an upper bound linear in `x` through the conjugate `f*`:
//!   `f(x) <= xi x - f*(xi)`;
//! * a lower bound from Jensen's inequality over a distribution `q` on the
//!   parents: `f(a + sum_j z_j) >= sum_j q_j f(a + z_j / q_j)`.
//!
//! Both bounds are exponentials of functions linear in `d`, so they factorize
//! over the diseases and can be folded into the priors. With a zero leak the
//! Jensen bound is `-inf` unless every parent in the support of `q` is
//! present; it then factorizes as an indicator on those parents times a
//! constant.

use crate::error::{Error, Result};
use crate::network::FindingCPD;
use crate::numeric::log1m_exp_neg;

/// `f(x) = log(1 - e^{-x})`.
pub fn eval_f(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("f(x) needs x > 0, got {x}")));
    }
    Ok(log1m_exp_neg(x))
}

/// `f'(x) = 1 / (e^x - 1)`.
pub fn eval_f_prime(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("f'(x) needs x > 0, got {x}")));
    }
    Ok(1.0 / x.exp_m1())
}

/// Conjugate `f*(xi) = -xi log xi + (xi + 1) log(xi + 1)`.
pub fn conjugate_f_star(xi: f64) -> Result<f64> {
    if !(xi > 0.0) {
        return Err(Error::Domain(format!("f*(xi) needs xi > 0, got {xi}")));
    }
    // Rearranged as xi log(1 + 1/xi) + log(1 + xi) to stay accurate as xi -> 0.
    Ok(xi * (1.0 / xi).ln_1p() + xi.ln_1p())
}

/// Derivative of the conjugate, `log((1 + xi) / xi)`.
pub fn conjugate_f_star_prime(xi: f64) -> f64 {
    (1.0 / xi).ln_1p()
}

/// Variational parameter at which the upper bound touches `f` at `x`.
pub fn tangent_xi(x: f64) -> Result<f64> {
    eval_f_prime(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpperParam(f64);

impl UpperParam {
    pub fn new(xi: f64) -> Result<Self> {
        if xi > 0.0 && xi.is_finite() {
            Ok(Self(xi))
        } else {
            Err(Error::Domain(format!("xi must be finite and > 0, got {xi}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Distribution over the parents of one finding, stored in the finding's
/// parent order.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerParam {
    weights: Vec<f64>,
}

impl LowerParam {
    pub fn new(finding: &FindingCPD, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != finding.parents.len() {
            return Err(Error::Domain(format!(
                "finding {} has {} parents but {} weights were given",
                finding.id,
                finding.parents.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Domain(format!("finding {}: negative lower weight", finding.id)));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "finding {}: lower weights sum to {total}, not 1",
                finding.id
            )));
        }
        Ok(Self { weights })
    }

    pub fn uniform(finding: &FindingCPD) -> Self {
        let n = finding.parents.len().max(1);
        Self {
            weights: vec![1.0 / n as f64; finding.parents.len()],
        }
    }

    /// `q_j ∝ theta_ij` over the parents present in `diseases`, the
    /// setting that makes the bound exact at that configuration.
    pub fn tight_at(finding: &FindingCPD, diseases: &[bool]) -> Option<Self> {
        let z: Vec<f64> = finding
            .parents
            .iter()
            .map(|e| if diseases[e.disease] { e.theta } else { 0.0 })
            .collect();
        let total: f64 = z.iter().sum();
        (total > 0.0).then(|| Self {
            weights: z.iter().map(|v| v / total).collect(),
        })
    }

    pub(crate) fn from_normalized(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// A bound of the form `[d_j = 1 for j in required] exp(log_const + sum_j multiplier_j d_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedEvidence {
    pub log_const: f64,
    /// `(disease, log multiplier)` pairs, only for parents of the source finding.
    pub multipliers: Vec<(usize, f64)>,
    /// Diseases that must be present for the bound to be nonzero.
    pub required: Vec<usize>,
}

impl FactorizedEvidence {
    /// Log of the bound at a disease configuration.
    pub fn log_value(&self, diseases: &[bool]) -> f64 {
        if self.required.iter().any(|&j| !diseases[j]) {
            return f64::NEG_INFINITY;
        }
        self.log_const
            + self
                .multipliers
                .iter()
                .filter(|(j, _)| diseases[*j])
                .map(|(_, m)| m)
                .sum::<f64>()
    }
}

/// Upper bound `exp(xi theta_i0 - f*(xi)) prod_j exp(xi theta_ij)^{d_j}`.
pub fn upper_factor(finding: &FindingCPD, xi: UpperParam) -> Result<FactorizedEvidence> {
    let xi = xi.value();
    Ok(FactorizedEvidence {
        log_const: xi * finding.leak - conjugate_f_star(xi)?,
        multipliers: finding
            .parents
            .iter()
            .map(|e| (e.disease, xi * e.theta))
            .collect(),
        required: Vec::new(),
    })
}

/// Jensen lower bound
/// `exp(f(theta_i0) + sum_j q_j d_j [f(theta_i0 + theta_ij / q_j) - f(theta_i0)])`.
/// A parent with `q_j = 0` contributes nothing (the limit of the term).
///
/// With `theta_i0 = 0` the bound is `exp(sum_j q_j f(theta_ij / q_j))` when
/// every parent with `q_j > 0` is present and zero otherwise.
pub fn lower_factor(finding: &FindingCPD, q: &LowerParam) -> Result<FactorizedEvidence> {
    if q.weights.len() != finding.parents.len() {
        return Err(Error::Domain(format!(
            "lower parameter does not match finding {}",
            finding.id
        )));
    }
    let leak = finding.leak;
    if leak == 0.0 {
        let mut log_const = 0.0;
        let mut required = Vec::new();
        for (e, &w) in finding.parents.iter().zip(&q.weights) {
            if w > 0.0 {
                log_const += w * log1m_exp_neg(e.theta / w);
                required.push(e.disease);
            }
        }
        return Ok(FactorizedEvidence {
            log_const,
            multipliers: Vec::new(),
            required,
        });
    }
    let base = eval_f(leak)?;
    let multipliers = finding
        .parents
        .iter()
        .zip(&q.weights)
        .map(|(e, &w)| {
            let m = if w > 0.0 {
                w * (log1m_exp_neg(leak + e.theta / w) - base)
            } else {
                0.0
            };
            (e.disease, m)
        })
        .collect();
    Ok(FactorizedEvidence {
        log_const: base,
        multipliers,
        required: Vec::new(),
    })
}
