//! Transformed models and the optimization of their variational parameters.
//!
//! A plan splits the positive findings into an exactly treated set and a
//! transformed set. Transformed findings contribute factorized bounds that
//! tilt the disease priors; the exact set is summed by inclusion-exclusion
//! under the tilted priors.
//!
//! The upper bound is convex in `xi` and is minimized by damped Newton
//! steps. The lower bound is maximized over the `q` simplices with EM.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exact::{ConditionedPriors, DEFAULT_QUICKSCORE_CAP};
use crate::expansion::{expand, Clamp, Expansion, ExpansionRequest, Probe, TiltedPriors};
use crate::network::{FindingCPD, NoisyOrNetwork};
use crate::transforms::{
    conjugate_f_star_prime, eval_f, eval_f_prime, lower_factor, tangent_xi, upper_factor, FactorizedEvidence, LowerParam, UpperParam,
};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Outer stopping tolerance on the change of the log bound, relative to
    /// `max(1, |bound|)`.
    pub tol: f64,
    /// Upper bound only: the largest gradient magnitude with respect to
    /// `log xi` must also fall below this before a run counts as converged.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Inner (M-step) stopping tolerance on the change of `q`.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Largest exact set the inclusion-exclusion may enumerate.
    pub cap: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            grad_tol: 1e-9,
            max_iter: 200,
            inner_tol: 1e-10,
            inner_max_iter: 50,
            cap: DEFAULT_QUICKSCORE_CAP,
        }
    }
}

fn check_partition(
    network: &NoisyOrNetwork,
    positive: &BTreeSet<usize>,
    exact: &BTreeSet<usize>,
    transformed: &BTreeSet<usize>,
) -> Result<()> {
    for &i in positive {
        network.finding(i)?;
        match (exact.contains(&i), transformed.contains(&i)) {
            (true, true) => {
                return Err(Error::InvalidPlan(format!(
                    "finding {i} is both exact and transformed"
                )))
            }
            (false, false) => {
                return Err(Error::InvalidPlan(format!("positive finding {i} is not covered")))
            }
            _ => {}
        }
    }
    if let Some(i) = exact.iter().chain(transformed).find(|i| !positive.contains(i)) {
        return Err(Error::InvalidPlan(format!("finding {i} is not a positive finding")));
    }
    Ok(())
}

/// Upper-bound plan: exact findings plus one `xi` per transformed finding.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperPlan {
    pub exact: BTreeSet<usize>,
    pub xi: BTreeMap<usize, f64>,
}

impl UpperPlan {
    /// Transforms every positive finding outside `exact`, initializing each
    /// `xi` at the tangent of the prior-mean activation.
    pub fn initial(
        network: &NoisyOrNetwork,
        priors: &ConditionedPriors,
        positive: &BTreeSet<usize>,
        exact: &BTreeSet<usize>,
    ) -> Result<Self> {
        let p = priors.as_slice();
        let mut xi = BTreeMap::new();
        for &i in positive.difference(exact) {
            let f = network.finding(i)?;
            let x = f.leak + f.parents.iter().map(|e| e.theta * p[e.disease]).sum::<f64>();
            xi.insert(i, tangent_xi(x)?);
        }
        Ok(Self {
            exact: exact.clone(),
            xi,
        })
    }

    pub fn check(&self, network: &NoisyOrNetwork, positive: &BTreeSet<usize>) -> Result<()> {
        let transformed: BTreeSet<usize> = self.xi.keys().copied().collect();
        check_partition(network, positive, &self.exact, &transformed)?;
        for (&i, &xi) in &self.xi {
            UpperParam::new(xi).map_err(|e| Error::InvalidPlan(format!("finding {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn positive(&self) -> BTreeSet<usize> {
        self.exact.iter().chain(self.xi.keys()).copied().collect()
    }

    /// Moves `ids` into the exact set, dropping their `xi`.
    pub fn with_exact(&self, ids: impl IntoIterator<Item = usize>) -> Self {
        let mut out = self.clone();
        for i in ids {
            out.xi.remove(&i);
            out.exact.insert(i);
        }
        out
    }
}

/// Lower-bound plan: exact findings plus one `q` simplex per transformed finding.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerPlan {
    pub exact: BTreeSet<usize>,
    pub q: BTreeMap<usize, LowerParam>,
}

impl LowerPlan {
    /// Transforms every positive finding outside `exact` with uniform `q`.
    pub fn initial(
        network: &NoisyOrNetwork,
        positive: &BTreeSet<usize>,
        exact: &BTreeSet<usize>,
    ) -> Result<Self> {
        let mut q = BTreeMap::new();
        for &i in positive.difference(exact) {
            q.insert(i, LowerParam::uniform(network.finding(i)?));
        }
        Ok(Self {
            exact: exact.clone(),
            q,
        })
    }

    pub fn check(&self, network: &NoisyOrNetwork, positive: &BTreeSet<usize>) -> Result<()> {
        let transformed: BTreeSet<usize> = self.q.keys().copied().collect();
        check_partition(network, positive, &self.exact, &transformed)
    }

    pub fn positive(&self) -> BTreeSet<usize> {
        self.exact.iter().chain(self.q.keys()).copied().collect()
    }

    pub fn with_exact(&self, ids: impl IntoIterator<Item = usize>) -> Self {
        let mut out = self.clone();
        for i in ids {
            out.q.remove(&i);
            out.exact.insert(i);
        }
        out
    }
}

/// The joint with transformed findings replaced by their factorized bounds:
/// tilted independent priors times the exact findings' noisy-ORs.
#[derive(Debug, Clone)]
pub struct TransformedModel<'a> {
    network: &'a NoisyOrNetwork,
    tilted: TiltedPriors,
    exact: Vec<&'a FindingCPD>,
}

impl<'a> TransformedModel<'a> {
    pub fn from_factors(
        network: &'a NoisyOrNetwork,
        priors: &ConditionedPriors,
        exact: &BTreeSet<usize>,
        factors: &[FactorizedEvidence],
    ) -> Result<Self> {
        let mut tilt = vec![0.0; network.n_diseases()];
        let mut log_const = 0.0;
        for fac in factors {
            log_const += fac.log_const;
            for &(j, m) in &fac.multipliers {
                tilt[j] += m;
            }
        }
        let exact = exact
            .iter()
            .map(|&i| network.finding(i))
            .collect::<Result<Vec<_>>>()?;
        let mut tilted = TiltedPriors::tilted(priors.as_slice(), &tilt, log_const);
        let required: BTreeSet<usize> = factors.iter().flat_map(|f| f.required.iter().copied()).collect();
        for j in required {
            tilted.force_present(j);
        }
        Ok(Self {
            network,
            tilted,
            exact,
        })
    }

    pub fn upper(
        network: &'a NoisyOrNetwork,
        priors: &ConditionedPriors,
        plan: &UpperPlan,
    ) -> Result<Self> {
        let factors = plan
            .xi
            .iter()
            .map(|(&i, &xi)| upper_factor(network.finding(i)?, UpperParam::new(xi)?))
            .collect::<Result<Vec<_>>>()?;
        Self::from_factors(network, priors, &plan.exact, &factors)
    }

    pub fn lower(
        network: &'a NoisyOrNetwork,
        priors: &ConditionedPriors,
        plan: &LowerPlan,
    ) -> Result<Self> {
        let factors = plan
            .q
            .iter()
            .map(|(&i, q)| lower_factor(network.finding(i)?, q))
            .collect::<Result<Vec<_>>>()?;
        Self::from_factors(network, priors, &plan.exact, &factors)
    }

    pub fn tilted(&self) -> &TiltedPriors {
        &self.tilted
    }

    pub fn expand(&self, request: &ExpansionRequest<'_>, cap: usize) -> Result<Expansion> {
        expand(&self.tilted, &self.exact, request, cap)
    }

    /// Log of the bound on `P(f+)` (or on `P(f+, clamps)`).
    pub fn log_bound(&self, clamps: &[Clamp], cap: usize) -> Result<f64> {
        Ok(self
            .expand(
                &ExpansionRequest {
                    clamps,
                    ..Default::default()
                },
                cap,
            )?
            .log_mass)
    }

    /// Posterior means of every disease, and mean and variance of
    /// `sum_j theta_kj d_j` for each finding `k` in `findings`.
    pub fn moments(&self, findings: &[usize], cap: usize) -> Result<Moments> {
        let probes: Vec<Probe> = findings
            .iter()
            .map(|&k| {
                Ok(self
                    .network
                    .finding(k)?
                    .parents
                    .iter()
                    .map(|e| (e.disease, e.theta))
                    .collect())
            })
            .collect::<Result<_>>()?;
        let out = self.expand(
            &ExpansionRequest {
                marginals: true,
                probes: &probes,
                ..Default::default()
            },
            cap,
        )?;
        Ok(Moments {
            log_bound: out.log_mass,
            marginals: out.marginals,
            findings: findings.iter().copied().zip(out.probe_moments).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub log_bound: f64,
    /// `E{d_j}` under the transformed posterior.
    pub marginals: Vec<f64>,
    /// Per finding `k`: `(E{sum_j theta_kj d_j}, Var{sum_j theta_kj d_j})`.
    pub findings: BTreeMap<usize, (f64, f64)>,
}

/// Moments of the transformed posterior for an upper plan, with the
/// activation moments of every transformed finding.
pub fn transformed_posterior_moments(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    plan: &UpperPlan,
    cap: usize,
) -> Result<Moments> {
    let model = TransformedModel::upper(network, priors, plan)?;
    let ids: Vec<usize> = plan.xi.keys().copied().collect();
    model.moments(&ids, cap)
}

pub fn upper_bound_value(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    plan: &UpperPlan,
    cap: usize,
) -> Result<f64> {
    TransformedModel::upper(network, priors, plan)?.log_bound(&[], cap)
}

pub fn lower_bound_value(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    plan: &LowerPlan,
    config: &OptimizerConfig,
) -> Result<f64> {
    TransformedModel::lower(network, priors, plan)?.log_bound(&[], config.cap)
}

/// Per transformed finding: first and diagonal second derivative of the
/// log upper bound with respect to its `xi`.
pub fn upper_gradient(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    plan: &UpperPlan,
    cap: usize,
) -> Result<BTreeMap<usize, (f64, f64)>> {
    let m = transformed_posterior_moments(network, priors, plan, cap)?;
    plan.xi
        .iter()
        .map(|(&k, &xi)| {
            let (mean, var) = m.findings[&k];
            let leak = network.finding(k)?.leak;
            let grad = leak - conjugate_f_star_prime(xi) + mean;
            let hess = 1.0 / xi - 1.0 / (1.0 + xi) + var;
            Ok((k, (grad, hess)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundResult<P> {
    pub log_bound: f64,
    pub plan: P,
    pub iterations: usize,
    pub converged: bool,
    /// Bound before the first sweep, then after every sweep.
    pub trace: Vec<f64>,
}

fn settled(prev: f64, next: f64, tol: f64) -> bool {
    (next - prev).abs() <= tol * prev.abs().max(1.0)
}

/// Log upper bound with its gradient and Hessian in `xi`:
/// `d/d xi_k = theta_k0 - log((1 + xi_k)/xi_k) + E{s_k}` and
/// `d2/d xi_k d xi_l = [k = l] / (xi_k (1 + xi_k)) + Cov{s_k, s_l}`, where
/// `s_k = sum_j theta_kj d_j` under the transformed posterior.
struct UpperLocal {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

fn upper_local(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    plan: &UpperPlan,
    transformed: &[&FindingCPD],
    probes: &[Probe],
    cap: usize,
) -> Result<UpperLocal> {
    let model = TransformedModel::upper(network, priors, plan)?;
    let out = model.expand(
        &ExpansionRequest {
            probes,
            probe_covariance: true,
            ..Default::default()
        },
        cap,
    )?;
    let m = transformed.len();
    let xi: Vec<f64> = transformed.iter().map(|f| plan.xi[&f.id]).collect();
    let grad = DVector::from_iterator(
        m,
        (0..m).map(|k| transformed[k].leak - conjugate_f_star_prime(xi[k]) + out.probe_moments[k].0),
    );
    let mut hess = DMatrix::from_row_slice(m, m, &out.probe_covariance);
    for k in 0..m {
        hess[(k, k)] += 1.0 / (xi[k] * (1.0 + xi[k]));
    }
    Ok(UpperLocal {
        value: out.log_mass,
        grad,
        hess,
    })
}

/// Newton direction `-H^{-1} g`, adding a growing ridge if `H` is not
/// numerically positive definite.
fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = hess.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut ridge = 0.0;
    for _ in 0..12 {
        let mut h = hess.clone();
        for k in 0..h.nrows() {
            h[(k, k)] += ridge;
        }
        if let Some(ch) = h.cholesky() {
            let d = -ch.solve(grad);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 100.0 };
    }
    None
}

/// Minimizes the log upper bound over the `xi` of the transformed findings,
/// starting from `plan`'s values. The bound is convex in `xi`; each iteration
/// takes a damped Newton step (backtracking, and never shrinking any `xi` by
/// more than a factor 100). If a step makes no progress, one sweep of exact
/// coordinate minimization is taken instead.
pub fn optimize_upper(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    plan: &UpperPlan,
    config: &OptimizerConfig,
) -> Result<BoundResult<UpperPlan>> {
    let mut plan = plan.clone();
    let transformed = plan
        .xi
        .keys()
        .map(|&i| network.finding(i))
        .collect::<Result<Vec<_>>>()?;
    if transformed.is_empty() {
        let current = upper_bound_value(network, priors, &plan, config.cap)?;
        return Ok(BoundResult {
            log_bound: current,
            plan,
            iterations: 0,
            converged: true,
            trace: vec![current],
        });
    }
    let exact = plan
        .exact
        .iter()
        .map(|&i| network.finding(i))
        .collect::<Result<Vec<_>>>()?;
    let probes: Vec<Probe> = transformed
        .iter()
        .map(|f| f.parents.iter().map(|e| (e.disease, e.theta)).collect())
        .collect();
    let log_grad = |plan: &UpperPlan, g: &DVector<f64>| {
        transformed
            .iter()
            .zip(g.iter())
            .map(|(f, gk)| (gk * plan.xi[&f.id]).abs())
            .fold(0.0, f64::max)
    };

    let mut local = upper_local(network, priors, &plan, &transformed, &probes, config.cap)?;
    let mut trace = vec![local.value];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let prev = local.value;
        let mut stepped = false;
        if let Some(dir) = newton_direction(&local.hess, &local.grad) {
            let slope = local.grad.dot(&dir);
            let mut t: f64 = 1.0;
            for (f, d) in transformed.iter().zip(dir.iter()) {
                if *d < 0.0 {
                    t = t.min(0.99 * plan.xi[&f.id] / -d);
                }
            }
            while slope < 0.0 && t > 1e-6 {
                let mut trial = plan.clone();
                for (f, d) in transformed.iter().zip(dir.iter()) {
                    *trial.xi.get_mut(&f.id).expect("transformed id") += t * d;
                }
                let next = upper_local(network, priors, &trial, &transformed, &probes, config.cap)?;
                // Armijo; once the predicted decrease is below rounding, a
                // shrinking gradient is accepted instead.
                let scale = prev.abs().max(1.0);
                let rounding = -slope < 1e-12 * scale
                    && next.value <= prev + 1e-15 * scale
                    && log_grad(&trial, &next.grad) < log_grad(&plan, &local.grad);
                if next.value <= prev + 1e-4 * t * slope || rounding {
                    plan = trial;
                    local = next;
                    stepped = true;
                    break;
                }
                t *= 0.5;
            }
        }
        if !stepped && log_grad(&plan, &local.grad) >= config.grad_tol {
            coordinate_sweep(priors, &exact, &transformed, &mut plan, config.cap)?;
            local = upper_local(network, priors, &plan, &transformed, &probes, config.cap)?;
        }
        trace.push(local.value);
        if settled(prev, local.value, config.tol) && log_grad(&plan, &local.grad) < config.grad_tol {
            converged = true;
            break;
        }
    }
    Ok(BoundResult {
        log_bound: local.value,
        plan,
        iterations,
        converged,
        trace,
    })
}

/// One cyclic pass of exact coordinate minimization over every `xi`.
fn coordinate_sweep(
    priors: &ConditionedPriors,
    exact: &[&FindingCPD],
    transformed: &[&FindingCPD],
    plan: &mut UpperPlan,
    cap: usize,
) -> Result<()> {
    let mut tilt = vec![0.0; priors.len()];
    for f in transformed {
        let xi = plan.xi[&f.id];
        for e in &f.parents {
            tilt[e.disease] += xi * e.theta;
        }
    }
    for f in transformed {
        let xi = plan.xi.get_mut(&f.id).expect("transformed id");
        for e in &f.parents {
            tilt[e.disease] -= *xi * e.theta;
        }
        *xi = minimize_coordinate(priors.as_slice(), exact, &tilt, f, *xi, cap)?;
        for e in &f.parents {
            tilt[e.disease] += *xi * e.theta;
        }
    }
    Ok(())
}

/// Solves `d/d xi_k log U = theta_k0 - log((1 + xi)/xi) + E_xi{sum_j theta_kj d_j} = 0`
/// for `xi_k` with the other parameters fixed (`tilt` holds their summed
/// multipliers). The derivative is increasing in `u = log xi_k`, so a
/// bracketed Newton iteration in `u` converges to the unique root. The start
/// point is the fixed-point update `xi = 1 / (exp(x_bar) - 1)` at the
/// current expectations.
fn minimize_coordinate(
    priors: &[f64],
    exact: &[&FindingCPD],
    tilt: &[f64],
    finding: &FindingCPD,
    start: f64,
    cap: usize,
) -> Result<f64> {
    let leak = finding.leak;
    let probe: Vec<Probe> = vec![finding.parents.iter().map(|e| (e.disease, e.theta)).collect()];
    let mut local = tilt.to_vec();
    let mut eval = |u: f64| -> Result<(f64, f64)> {
        let xi = u.exp();
        for e in &finding.parents {
            local[e.disease] = tilt[e.disease] + xi * e.theta;
        }
        let tilted = TiltedPriors::tilted(priors, &local, 0.0);
        let out = expand(
            &tilted,
            exact,
            &ExpansionRequest {
                probes: &probe,
                ..Default::default()
            },
            cap,
        )?;
        let (mean, var) = out.probe_moments[0];
        let g = leak - conjugate_f_star_prime(xi) + mean;
        let dg = 1.0 / (1.0 + xi) + xi * var;
        Ok((g, dg))
    };

    let (g0, _) = eval(start.ln())?;
    let mean0 = g0 - leak + conjugate_f_star_prime(start);
    let mut u = eval_f_prime(leak + mean0).unwrap_or(start).ln();
    if !u.is_finite() {
        u = start.ln();
    }
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for _ in 0..100 {
        let (g, dg) = eval(u)?;
        if g == 0.0 {
            break;
        }
        if g < 0.0 {
            lo = lo.max(u);
        } else {
            hi = hi.min(u);
        }
        let mut next = u - g / dg;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => u + 2.0,
                (false, true) => u - 2.0,
                (false, false) => unreachable!(),
            };
        }
        next = next.clamp(u - 8.0, u + 8.0);
        if (next - u).abs() < 1e-12 * u.abs().max(1.0) {
            u = next;
            break;
        }
        u = next;
    }
    Ok(u.exp())
}

/// Per finding `sum_j q_j E_j [f(a + theta_j / q_j) - f(a)]`, the part of the
/// expected complete log-likelihood that depends on `q`.
fn expected_lower_objective(f: &FindingCPD, leak: f64, q: &[f64], means: &[f64]) -> f64 {
    let base = eval_f(leak).expect("zero leaks are not updated by EM");
    f.parents
        .iter()
        .zip(q)
        .map(|(e, &w)| {
            if w > 0.0 {
                w * means[e.disease] * (eval_f(leak + e.theta / w).expect("positive") - base)
            } else {
                0.0
            }
        })
        .sum()
}

/// M-step for one finding: iterates the normalized multiplicative update
/// `q_j <- E_j [q_j f(a + theta_j/q_j) - theta_j f'(a + theta_j/q_j) - q_j f(a)]`.
fn m_step(
    f: &FindingCPD,
    leak: f64,
    q: &[f64],
    means: &[f64],
    config: &OptimizerConfig,
) -> Result<Vec<f64>> {
    if f.parents.len() <= 1 {
        return Ok(q.to_vec());
    }
    let base = eval_f(leak)?;
    let start_obj = expected_lower_objective(f, leak, q, means);
    let mut best = (start_obj, q.to_vec());
    let mut cur = q.to_vec();
    for _ in 0..config.inner_max_iter {
        let mut next = Vec::with_capacity(cur.len());
        for (e, &w) in f.parents.iter().zip(&cur) {
            let u = if w > 0.0 {
                let y = leak + e.theta / w;
                means[e.disease] * (w * eval_f(y)? - e.theta * eval_f_prime(y)? - w * base)
            } else {
                0.0
            };
            if u < 0.0 || !u.is_finite() {
                return Err(Error::Internal(format!(
                    "finding {}: EM update for disease {} is {u} before normalization",
                    f.id, e.disease
                )));
            }
            next.push(u);
        }
        let total: f64 = next.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Internal(format!(
                "finding {}: EM update vanished before normalization",
                f.id
            )));
        }
        next.iter_mut().for_each(|v| *v /= total);
        let change = next
            .iter()
            .zip(&cur)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        cur = next;
        let obj = expected_lower_objective(f, leak, &cur, means);
        if obj >= best.0 {
            best = (obj, cur.clone());
        }
        if change < config.inner_tol {
            break;
        }
    }
    Ok(best.1)
}

/// `q` proportional to `theta` on the parents in `support`, zero elsewhere.
fn support_weights(f: &FindingCPD, support: &[bool]) -> Vec<f64> {
    let total: f64 = f
        .parents
        .iter()
        .zip(support)
        .filter(|(_, &s)| s)
        .map(|(e, _)| e.theta)
        .sum();
    f.parents
        .iter()
        .zip(support)
        .map(|(e, &s)| if s { e.theta / total } else { 0.0 })
        .collect()
}

/// For a zero-leak finding the bound is `[d_S = 1] (1 - e^{-theta_S})` once
/// `q` is proportional to `theta` on its support `S`; improves `S` by adding
/// or removing one parent at a time while the bound increases.
fn search_support(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    plan: &mut LowerPlan,
    i: usize,
    mut current: f64,
    config: &OptimizerConfig,
) -> Result<f64> {
    let f = network.finding(i)?;
    let mut support: Vec<bool> = plan.q[&i].weights().iter().map(|&w| w > 0.0).collect();
    let tight = LowerParam::from_normalized(support_weights(f, &support));
    if tight != plan.q[&i] {
        let mut trial = plan.clone();
        trial.q.insert(i, tight);
        let value = lower_bound_value(network, priors, &trial, config)?;
        if value >= current {
            *plan = trial;
            current = value;
        }
    }
    for _ in 0..2 * f.parents.len() {
        let mut best: Option<(f64, Vec<bool>)> = None;
        for k in 0..support.len() {
            let mut cand = support.clone();
            cand[k] = !cand[k];
            if !cand.iter().any(|&b| b) {
                continue;
            }
            let mut trial = plan.clone();
            trial.q.insert(i, LowerParam::from_normalized(support_weights(f, &cand)));
            let value = lower_bound_value(network, priors, &trial, config)?;
            if value > best.as_ref().map_or(current, |b| b.0) {
                best = Some((value, cand));
            }
        }
        let Some((value, cand)) = best else { break };
        if value <= current + 1e-14 * current.abs().max(1.0) {
            break;
        }
        plan.q.insert(i, LowerParam::from_normalized(support_weights(f, &cand)));
        support = cand;
        current = value;
    }
    Ok(current)
}

/// Maximizes the log lower bound over the `q` simplices with EM, starting
/// from `plan`'s values. Zero-leak findings, whose bound is an indicator on
/// the support of `q`, are updated by a discrete search over that support.
pub fn optimize_lower(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    plan: &LowerPlan,
    config: &OptimizerConfig,
) -> Result<BoundResult<LowerPlan>> {
    let mut plan = plan.clone();
    let model = TransformedModel::lower(network, priors, &plan)?;
    let mut moments = model.moments(&[], config.cap)?;
    let mut current = moments.log_bound;
    let mut trace = vec![current];
    if plan.q.is_empty() {
        return Ok(BoundResult {
            log_bound: current,
            plan,
            iterations: 0,
            converged: true,
            trace,
        });
    }
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let ids: Vec<usize> = plan.q.keys().copied().collect();
        let mut zero_leak = Vec::new();
        for i in ids {
            let f = network.finding(i)?;
            if f.leak == 0.0 {
                zero_leak.push(i);
                continue;
            }
            let q = m_step(f, f.leak, plan.q[&i].weights(), &moments.marginals, config)?;
            plan.q.insert(i, LowerParam::from_normalized(q));
        }
        let mut next = lower_bound_value(network, priors, &plan, config)?;
        for i in zero_leak {
            next = search_support(network, priors, &mut plan, i, next, config)?;
        }
        let model = TransformedModel::lower(network, priors, &plan)?;
        moments = model.moments(&[], config.cap)?;
        let next = moments.log_bound;
        trace.push(next);
        let done = settled(current, next, config.tol);
        current = next;
        if done {
            converged = true;
            break;
        }
    }
    Ok(BoundResult {
        log_bound: current,
        plan,
        iterations,
        converged,
        trace,
    })
}

/// When the variational parameters are fitted relative to the exact set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizeMode {
    /// Optimize with the full exact set installed.
    Full,
    /// Optimize once after the first `ceil(|exact| / 2)` exact findings are
    /// installed, then install the rest with the parameters frozen.
    #[default]
    Staged,
}

fn staged_prefix(exact_order: &[usize], mode: OptimizeMode) -> usize {
    match mode {
        OptimizeMode::Full => exact_order.len(),
        OptimizeMode::Staged => exact_order.len().div_ceil(2),
    }
}

/// Fits an upper plan whose exact set is `exact_order` (listed in the order
/// the findings are reinstated).
pub fn fit_upper(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    positive: &BTreeSet<usize>,
    exact_order: &[usize],
    mode: OptimizeMode,
    config: &OptimizerConfig,
) -> Result<BoundResult<UpperPlan>> {
    fit_upper_warm(network, priors, positive, exact_order, mode, None, config)
}

/// [`fit_upper`] starting from the `xi` of `warm` wherever it has one (for
/// example the all-transformed optimum computed while scoring deltas).
pub fn fit_upper_warm(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    positive: &BTreeSet<usize>,
    exact_order: &[usize],
    mode: OptimizeMode,
    warm: Option<&UpperPlan>,
    config: &OptimizerConfig,
) -> Result<BoundResult<UpperPlan>> {
    let stage = staged_prefix(exact_order, mode);
    let first: BTreeSet<usize> = exact_order[..stage].iter().copied().collect();
    let mut init = UpperPlan::initial(network, priors, positive, &first)?;
    if let Some(w) = warm {
        for (k, xi) in init.xi.iter_mut() {
            if let Some(&v) = w.xi.get(k) {
                *xi = v;
            }
        }
    }
    init.check(network, positive)?;
    let mut res = optimize_upper(network, priors, &init, config)?;
    if stage < exact_order.len() {
        res.plan = res.plan.with_exact(exact_order[stage..].iter().copied());
        res.log_bound = upper_bound_value(network, priors, &res.plan, config.cap)?;
    }
    Ok(res)
}

/// Lower-bound counterpart of [`fit_upper`].
pub fn fit_lower(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    positive: &BTreeSet<usize>,
    exact_order: &[usize],
    mode: OptimizeMode,
    config: &OptimizerConfig,
) -> Result<BoundResult<LowerPlan>> {
    let stage = staged_prefix(exact_order, mode);
    let first: BTreeSet<usize> = exact_order[..stage].iter().copied().collect();
    let init = LowerPlan::initial(network, positive, &first)?;
    init.check(network, positive)?;
    let mut res = optimize_lower(network, priors, &init, config)?;
    if stage < exact_order.len() {
        res.plan = res.plan.with_exact(exact_order[stage..].iter().copied());
        res.log_bound = lower_bound_value(network, priors, &res.plan, config)?;
    }
    Ok(res)
}

/// Post-hoc optimality evidence for an optimized upper plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpperCertificate {
    /// Largest gradient magnitude with respect to `log xi`.
    pub gradient_inf_norm: f64,
    /// Largest decrease of the log bound found among the random perturbations.
    pub best_perturbation_gain: f64,
    pub certified: bool,
}

/// Checks the gradient norm and probes `trials` random perturbations of
/// relative size `scale` in every `xi`; the plan is certified when the
/// gradient is below 1e-6 and no perturbation lowers the bound by more than
/// 1e-9.
pub fn certify_upper(
    network: &NoisyOrNetwork,
    priors: &ConditionedPriors,
    plan: &UpperPlan,
    trials: usize,
    scale: f64,
    seed: u64,
    cap: usize,
) -> Result<UpperCertificate> {
    let grad = upper_gradient(network, priors, plan, cap)?;
    let gradient_inf_norm = grad
        .iter()
        .map(|(k, &(g, _))| (g * plan.xi[k]).abs())
        .fold(0.0, f64::max);
    let base = upper_bound_value(network, priors, plan, cap)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best_perturbation_gain = 0.0f64;
    for _ in 0..trials {
        let mut trial = plan.clone();
        for xi in trial.xi.values_mut() {
            *xi *= (scale * rng.gen_range(-1.0..=1.0)).exp();
        }
        let value = upper_bound_value(network, priors, &trial, cap)?;
        best_perturbation_gain = best_perturbation_gain.max(base - value);
    }
    Ok(UpperCertificate {
        gradient_inf_norm,
        best_perturbation_gain,
        certified: gradient_inf_norm < 1e-6 && best_perturbation_gain <= 1e-9,
    })
}
