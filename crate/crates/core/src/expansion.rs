//! Inclusion-exclusion over a set of exactly treated positive findings.
//!
//! With independent (possibly tilted) disease weights `p_j(d_j)` and exact
//! findings `F`, expanding `prod_{i in F} (1 - e^{-theta_i0} prod_j e^{-theta_ij d_j})`
//! and summing out each disease gives
//!
//! ```text
//! sum_d prod_i P(f_i+ | d) prod_j p_j(d_j)
//!   = sum_{S ⊆ F} (-1)^{|S|} prod_{i in S} e^{-theta_i0}
//!       prod_j [p_j(0) + p_j(1) prod_{i in S} e^{-theta_ij}]
//! ```
//!
//! Each subset term is itself a product measure over the diseases, so the
//! same enumeration yields marginals, joints with a single disease and the
//! mean and variance of any linear functional of `d`.
//!
//! Terms are computed and summed in double-double arithmetic: the signed
//! terms are O(1) while their sum (the likelihood) can be many orders of
//! magnitude smaller.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::network::FindingCPD;
use crate::numeric::{sigmoid, softplus, DoubleDouble as DD};

/// Fix disease `disease` to `value` for a joint query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Clamp {
    pub disease: usize,
    pub value: bool,
}

/// Independent disease weights `exp(log_norm) prod_j p_j(d_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedPriors {
    p1: Vec<f64>,
    p0: Vec<f64>,
    log_norm: f64,
}

impl TiltedPriors {
    pub fn new(priors: &[f64]) -> Self {
        Self {
            p1: priors.to_vec(),
            p0: priors.iter().map(|p| 1.0 - p).collect(),
            log_norm: 0.0,
        }
    }

    /// Multiplies the weight of `d_j = 1` by `exp(tilt[j])` and the whole
    /// measure by `exp(log_const)`, then renormalizes each disease.
    pub fn tilted(priors: &[f64], tilt: &[f64], log_const: f64) -> Self {
        let mut p1 = Vec::with_capacity(priors.len());
        let mut p0 = Vec::with_capacity(priors.len());
        let mut log_norm = log_const;
        for (&p, &a) in priors.iter().zip(tilt) {
            if a == 0.0 {
                p1.push(p);
                p0.push(1.0 - p);
                continue;
            }
            let l = p.ln() - (-p).ln_1p() + a;
            p1.push(sigmoid(l));
            p0.push(sigmoid(-l));
            log_norm += (-p).ln_1p() + softplus(l);
        }
        Self { p1, p0, log_norm }
    }

    /// Keeps only the `d_j = 1` part of the measure for disease `j`.
    pub fn force_present(&mut self, j: usize) {
        self.log_norm += self.p1[j].ln();
        self.p1[j] = 1.0;
        self.p0[j] = 0.0;
    }

    pub fn len(&self) -> usize {
        self.p1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p1.is_empty()
    }

    pub fn p1(&self) -> &[f64] {
        &self.p1
    }

    pub fn p0(&self) -> &[f64] {
        &self.p0
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    fn log_weight(&self, j: usize, value: bool) -> f64 {
        if value {
            self.p1[j].ln()
        } else {
            self.p0[j].ln()
        }
    }
}

/// A linear functional `sum_j w_j d_j` whose mean and variance are wanted;
/// weights listed more than once for a disease are summed.
pub type Probe = Vec<(usize, f64)>;

#[derive(Debug, Clone, Default)]
pub struct ExpansionRequest<'a> {
    pub clamps: &'a [Clamp],
    pub marginals: bool,
    pub probes: &'a [Probe],
    /// Also return the covariance matrix of the probes.
    pub probe_covariance: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cancellation {
    /// `|result| / max |partial sum|`.
    pub ratio: f64,
    /// Set when the ratio falls below `1e-3`.
    pub warning: bool,
}

#[derive(Debug, Clone)]
pub struct Expansion {
    /// Log of the total (unnormalized) mass.
    pub log_mass: f64,
    pub cancellation: Cancellation,
    /// Per disease `(log P(., d_j = 0), log P(., d_j = 1))`; empty unless requested.
    pub log_joint: Vec<(f64, f64)>,
    /// Per disease `P(d_j = 1 | .)`; empty unless requested.
    pub marginals: Vec<f64>,
    /// Per probe `(mean, variance)`.
    pub probe_moments: Vec<(f64, f64)>,
    /// Row-major `P x P` probe covariance; empty unless requested.
    pub probe_covariance: Vec<f64>,
}

impl Expansion {
    /// The result when a clamp selects a value of zero weight.
    fn vanished(n: usize, request: &ExpansionRequest<'_>) -> Self {
        let np = request.probes.len();
        Self {
            log_mass: f64::NEG_INFINITY,
            cancellation: Cancellation {
                ratio: 1.0,
                warning: false,
            },
            log_joint: if request.marginals {
                vec![(f64::NEG_INFINITY, f64::NEG_INFINITY); n]
            } else {
                Vec::new()
            },
            marginals: if request.marginals { vec![f64::NAN; n] } else { Vec::new() },
            probe_moments: vec![(f64::NAN, f64::NAN); np],
            probe_covariance: if request.probe_covariance {
                vec![f64::NAN; np * np]
            } else {
                Vec::new()
            },
        }
    }
}

struct Coupled {
    /// Global ids of diseases touched by exact findings.
    diseases: Vec<usize>,
    /// Per coupled disease: clamped value, if any.
    clamp: Vec<Option<bool>>,
    p1: Vec<DD>,
    p0: Vec<DD>,
    /// Per exact finding: `e^{-theta_i0}` and `(local index, e^{-theta_ij})`.
    leak: Vec<DD>,
    edges: Vec<Vec<(usize, DD)>>,
    /// Per probe: `(local index, weight)` over coupled diseases.
    probes: Vec<Vec<(usize, f64)>>,
    /// Per probe pair `a <= b` (row-major upper triangle): coupled diseases
    /// in both, with the product of the two weights. Empty unless the
    /// covariance is requested.
    shared: Vec<Vec<(usize, f64)>>,
}

struct Sums {
    total: DD,
    max_partial: f64,
    num1: Vec<DD>,
    num0: Vec<DD>,
    probe_first: Vec<DD>,
    probe_second: Vec<DD>,
    /// Per probe pair `a <= b`: signed sum of `term * E{s_a s_b | term}`.
    probe_cross: Vec<DD>,
}

/// Runs the signed subset expansion.
pub fn expand(
    priors: &TiltedPriors,
    exact: &[&FindingCPD],
    request: &ExpansionRequest<'_>,
    cap: usize,
) -> Result<Expansion> {
    if exact.len() > cap {
        return Err(Error::CapExceeded {
            what: "exact finding set",
            size: exact.len(),
            cap,
        });
    }
    let n = priors.len();
    let mut clamp_of = vec![None; n];
    for c in request.clamps {
        if c.disease >= n {
            return Err(Error::UnknownDisease(c.disease));
        }
        if clamp_of[c.disease].is_some() {
            return Err(Error::Domain(format!("disease {} clamped twice", c.disease)));
        }
        clamp_of[c.disease] = Some(c.value);
    }
    if request.clamps.iter().any(|c| priors.log_weight(c.disease, c.value) == f64::NEG_INFINITY) {
        return Ok(Expansion::vanished(n, request));
    }

    let mut local = vec![usize::MAX; n];
    let mut coupled = Coupled {
        diseases: Vec::new(),
        clamp: Vec::new(),
        p1: Vec::new(),
        p0: Vec::new(),
        leak: Vec::with_capacity(exact.len()),
        edges: Vec::with_capacity(exact.len()),
        probes: Vec::new(),
        shared: Vec::new(),
    };
    for f in exact {
        let (a, _) = DD::exp_neg_pair(f.leak);
        coupled.leak.push(a);
        let mut edges = Vec::with_capacity(f.parents.len());
        for e in &f.parents {
            if e.disease >= n {
                return Err(Error::UnknownDisease(e.disease));
            }
            if local[e.disease] == usize::MAX {
                local[e.disease] = coupled.diseases.len();
                coupled.diseases.push(e.disease);
                coupled.clamp.push(clamp_of[e.disease]);
                coupled.p1.push(DD::from_f64(priors.p1[e.disease]));
                coupled.p0.push(DD::from_f64(priors.p0[e.disease]));
            }
            edges.push((local[e.disease], DD::exp_neg_pair(e.theta).0));
        }
        coupled.edges.push(edges);
    }

    // Contributions from diseases no exact finding touches.
    let mut uncoupled_log = 0.0;
    for j in 0..n {
        if local[j] == usize::MAX {
            if let Some(v) = clamp_of[j] {
                uncoupled_log += priors.log_weight(j, v);
            }
        }
    }
    let mut probe_const = Vec::with_capacity(request.probes.len());
    let mut merged_probes = Vec::with_capacity(request.probes.len());
    for probe in request.probes {
        let mut mean = 0.0;
        let mut var = 0.0;
        let mut loc = Vec::new();
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for &(j, w) in probe {
            if j >= n {
                return Err(Error::UnknownDisease(j));
            }
            *merged.entry(j).or_default() += w;
        }
        for (&j, &w) in &merged {
            if local[j] != usize::MAX {
                loc.push((local[j], w));
            } else {
                let r = match clamp_of[j] {
                    Some(v) => f64::from(u8::from(v)),
                    None => priors.p1[j],
                };
                mean += w * r;
                var += w * w * r * (1.0 - r);
            }
        }
        coupled.probes.push(loc);
        probe_const.push((mean, var));
        merged_probes.push(merged);
    }

    // Covariance between probes: the uncoupled diseases contribute a
    // constant; the coupled ones are accumulated per subset term.
    let np = request.probes.len();
    let mut uncoupled_cov = Vec::new();
    if request.probe_covariance {
        uncoupled_cov = vec![0.0; np * np];
        for a in 0..np {
            for b in a..np {
                let mut shared = Vec::new();
                let mut cov = 0.0;
                for (&j, &wa) in &merged_probes[a] {
                    let Some(&wb) = merged_probes[b].get(&j) else { continue };
                    if local[j] != usize::MAX {
                        shared.push((local[j], wa * wb));
                    } else if clamp_of[j].is_none() {
                        let r = priors.p1[j];
                        cov += wa * wb * r * (1.0 - r);
                    }
                }
                coupled.shared.push(shared);
                uncoupled_cov[a * np + b] = cov;
                uncoupled_cov[b * np + a] = cov;
            }
        }
    }

    let nc = coupled.diseases.len();
    let mut sums = Sums {
        total: DD::ZERO,
        max_partial: 0.0,
        num1: vec![DD::ZERO; if request.marginals { nc } else { 0 }],
        num0: vec![DD::ZERO; if request.marginals { nc } else { 0 }],
        probe_first: vec![DD::ZERO; request.probes.len()],
        probe_second: vec![DD::ZERO; request.probes.len()],
        probe_cross: vec![DD::ZERO; coupled.shared.len()],
    };
    let mut stack: Vec<Vec<DD>> = vec![vec![DD::ONE; nc]; exact.len() + 1];
    let mut scratch = Scratch {
        f: vec![DD::ZERO; nc],
        r: vec![DD::ZERO; nc],
        mean: vec![DD::ZERO; np],
    };
    descend(&coupled, &mut stack, 0, DD::ONE, false, request.marginals, &mut sums, &mut scratch);

    let total = sums.total.to_f64();
    let ratio = if sums.max_partial > 0.0 {
        total.abs() / sums.max_partial
    } else {
        0.0
    };
    let cancellation = Cancellation {
        ratio,
        warning: ratio < 1e-3,
    };
    if !(total > 0.0) {
        return Err(Error::NumericalBreakdown(total));
    }
    let log_mass = priors.log_norm + uncoupled_log + total.ln();

    let mut log_joint = Vec::new();
    let mut marginals = Vec::new();
    if request.marginals {
        log_joint.reserve(n);
        marginals.reserve(n);
        for j in 0..n {
            let (m1, m0) = if local[j] != usize::MAX {
                let l = local[j];
                let z = sums.total;
                (
                    (sums.num1[l] / z).to_f64().max(0.0),
                    (sums.num0[l] / z).to_f64().max(0.0),
                )
            } else {
                match clamp_of[j] {
                    Some(true) => (1.0, 0.0),
                    Some(false) => (0.0, 1.0),
                    None => (priors.p1[j], priors.p0[j]),
                }
            };
            log_joint.push((log_mass + m0.ln(), log_mass + m1.ln()));
            marginals.push(m1 / (m0 + m1));
        }
    }

    let probe_moments: Vec<(f64, f64)> = probe_const
        .iter()
        .enumerate()
        .map(|(k, &(cmean, cvar))| {
            let first = (sums.probe_first[k] / sums.total).to_f64();
            let second = (sums.probe_second[k] / sums.total).to_f64();
            (cmean + first, (second - first * first).max(0.0) + cvar)
        })
        .collect();

    let mut probe_covariance = Vec::new();
    if request.probe_covariance {
        probe_covariance = uncoupled_cov;
        let first: Vec<f64> = sums.probe_first.iter().map(|&s| (s / sums.total).to_f64()).collect();
        let mut k = 0;
        for a in 0..np {
            for b in a..np {
                let cross = (sums.probe_cross[k] / sums.total).to_f64();
                k += 1;
                let c = probe_covariance[a * np + b] + cross - first[a] * first[b];
                probe_covariance[a * np + b] = c;
                probe_covariance[b * np + a] = c;
            }
        }
        for a in 0..np {
            probe_covariance[a * np + a] = probe_moments[a].1;
        }
    }

    Ok(Expansion {
        log_mass,
        cancellation,
        log_joint,
        marginals,
        probe_moments,
        probe_covariance,
    })
}

struct Scratch {
    f: Vec<DD>,
    r: Vec<DD>,
    /// Per probe conditional mean within the current term.
    mean: Vec<DD>,
}

#[allow(clippy::too_many_arguments)]
fn descend(
    c: &Coupled,
    stack: &mut [Vec<DD>],
    depth: usize,
    leak_prod: DD,
    negative: bool,
    marginals: bool,
    sums: &mut Sums,
    scratch: &mut Scratch,
) {
    if depth == c.edges.len() {
        leaf(c, &stack[depth], leak_prod, negative, marginals, sums, scratch);
        return;
    }
    // Exclude finding `depth`.
    {
        let (head, tail) = stack.split_at_mut(depth + 1);
        tail[0].copy_from_slice(&head[depth]);
    }
    descend(c, stack, depth + 1, leak_prod, negative, marginals, sums, scratch);
    // Include it.
    {
        let (head, tail) = stack.split_at_mut(depth + 1);
        tail[0].copy_from_slice(&head[depth]);
        for &(l, b) in &c.edges[depth] {
            tail[0][l] = tail[0][l] * b;
        }
    }
    descend(
        c,
        stack,
        depth + 1,
        leak_prod * c.leak[depth],
        !negative,
        marginals,
        sums,
        scratch,
    );
}

fn leaf(
    c: &Coupled,
    b: &[DD],
    leak_prod: DD,
    negative: bool,
    marginals: bool,
    sums: &mut Sums,
    scratch: &mut Scratch,
) {
    let mut term = leak_prod;
    for l in 0..b.len() {
        let f = match c.clamp[l] {
            None => c.p0[l] + c.p1[l] * b[l],
            Some(true) => c.p1[l] * b[l],
            Some(false) => c.p0[l],
        };
        scratch.f[l] = f;
        term = term * f;
    }
    if negative {
        term = -term;
    }
    sums.total = sums.total + term;
    sums.max_partial = sums.max_partial.max(sums.total.hi.abs());
    if term.hi == 0.0 {
        return;
    }

    let need_r = marginals || !c.probes.is_empty();
    if need_r {
        for l in 0..b.len() {
            scratch.r[l] = match c.clamp[l] {
                None => c.p1[l] * b[l] / scratch.f[l],
                Some(true) => DD::ONE,
                Some(false) => DD::ZERO,
            };
        }
    }
    if marginals {
        for l in 0..b.len() {
            let r = scratch.r[l];
            let (t1, t0) = match c.clamp[l] {
                None => (term * r, term * (c.p0[l] / scratch.f[l])),
                Some(true) => (term, DD::ZERO),
                Some(false) => (DD::ZERO, term),
            };
            sums.num1[l] = sums.num1[l] + t1;
            sums.num0[l] = sums.num0[l] + t0;
        }
    }
    for (k, probe) in c.probes.iter().enumerate() {
        let mut mean = DD::ZERO;
        let mut var = DD::ZERO;
        for &(l, w) in probe {
            let r = scratch.r[l];
            mean = mean + r.mul_f64(w);
            var = var + (r * (DD::ONE - r)).mul_f64(w * w);
        }
        sums.probe_first[k] = sums.probe_first[k] + term * mean;
        sums.probe_second[k] = sums.probe_second[k] + term * (mean * mean + var);
        scratch.mean[k] = mean;
    }
    if !c.shared.is_empty() {
        let np = c.probes.len();
        let mut k = 0;
        for a in 0..np {
            for b in a..np {
                let mut cross = scratch.mean[a] * scratch.mean[b];
                for &(l, w) in &c.shared[k] {
                    let r = scratch.r[l];
                    cross = cross + (r * (DD::ONE - r)).mul_f64(w);
                }
                sums.probe_cross[k] = sums.probe_cross[k] + term * cross;
                k += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Edge;

    #[test]
    fn empty_exact_set_is_the_normalizer() {
        let p = TiltedPriors::tilted(&[0.2, 0.5], &[1.0, 0.0], 0.3);
        let out = expand(&p, &[], &ExpansionRequest::default(), 24).unwrap();
        let expected = 0.3 + (0.8f64 + 0.2 * 1f64.exp()).ln();
        assert!((out.log_mass - expected).abs() < 1e-14);
    }

    #[test]
    fn single_finding_two_term_formula() {
        let f = FindingCPD::new(
            0,
            0.1,
            vec![Edge { disease: 0, theta: 1.0 }, Edge { disease: 1, theta: 0.4 }],
        );
        let priors = [0.3, 0.6];
        let p = TiltedPriors::new(&priors);
        let out = expand(&p, &[&f], &ExpansionRequest::default(), 24).unwrap();
        let prod: f64 = (0.7 + 0.3 * (-1.0f64).exp()) * (0.4 + 0.6 * (-0.4f64).exp());
        let expected = 1.0 - (-0.1f64).exp() * prod;
        assert!((out.log_mass.exp() - expected).abs() < 1e-15);
    }

    #[test]
    fn cap_is_enforced() {
        let f = FindingCPD::new(0, 0.1, vec![Edge { disease: 0, theta: 1.0 }]);
        let p = TiltedPriors::new(&[0.3]);
        let err = expand(&p, &[&f, &f], &ExpansionRequest::default(), 1).unwrap_err();
        assert!(matches!(err, Error::CapExceeded { cap: 1, .. }));
    }
}
