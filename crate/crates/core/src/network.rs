//! Bipartite noisy-OR networks: diseases with independent priors on top,
//! findings with noisy-OR conditional distributions below.
//!
//! Every finding stores its leak and edge weights in the exponent
//! parameterization `theta = -log(1 - q)`, so that
//! `P(f_i = 0 | d) = exp(-theta_i0 - sum_j theta_ij d_j)`.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Converts a causal probability `q` into its exponent weight `-log(1 - q)`.
pub fn q_to_theta(q: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::Domain(format!("q = {q} outside [0, 1)")));
    }
    Ok(-(-q).ln_1p())
}

/// Inverse of [`q_to_theta`]: `1 - exp(-theta)`.
pub fn theta_to_q(theta: f64) -> Result<f64> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::Domain(format!("theta = {theta} is not finite and nonnegative")));
    }
    Ok(-(-theta).exp_m1())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiseaseNode {
    pub id: usize,
    pub prior: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub disease: usize,
    pub theta: f64,
}

/// Noisy-OR conditional distribution of one finding.
#[derive(Debug, Clone, PartialEq)]
pub struct FindingCPD {
    pub id: usize,
    /// Leak weight `theta_i0`.
    pub leak: f64,
    /// Parent edges, sorted by disease id.
    pub parents: Vec<Edge>,
}

impl FindingCPD {
    pub fn new(id: usize, leak: f64, mut parents: Vec<Edge>) -> Self {
        parents.sort_by_key(|e| e.disease);
        Self { id, leak, parents }
    }

    /// Activation `theta_i0 + sum_j theta_ij d_j` for a disease configuration.
    pub fn activation(&self, diseases: &[bool]) -> f64 {
        self.leak
            + self
                .parents
                .iter()
                .filter(|e| diseases[e.disease])
                .map(|e| e.theta)
                .sum::<f64>()
    }

    pub fn total_weight(&self) -> f64 {
        self.leak + self.parents.iter().map(|e| e.theta).sum::<f64>()
    }

    pub fn weight_of(&self, disease: usize) -> Option<f64> {
        self.parents
            .binary_search_by_key(&disease, |e| e.disease)
            .ok()
            .map(|k| self.parents[k].theta)
    }
}

/// One broken invariant, naming the node or edge at fault.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DiseaseId { position: usize, id: usize },
    Prior { disease: usize, prior: String },
    FindingId { position: usize, id: usize },
    Leak { finding: usize, leak: String },
    EdgeWeight { finding: usize, disease: usize, theta: String },
    UnknownParent { finding: usize, disease: usize },
    DuplicateParent { finding: usize, disease: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DiseaseId { position, id } => {
                write!(f, "diseases[{position}]: id {id} breaks dense numbering")
            }
            Violation::Prior { disease, prior } => {
                write!(f, "disease {disease}: prior {prior} not in (0, 1)")
            }
            Violation::FindingId { position, id } => {
                write!(f, "findings[{position}]: id {id} breaks dense numbering")
            }
            Violation::Leak { finding, leak } => {
                write!(f, "finding {finding}: leak theta {leak} not finite and nonnegative")
            }
            Violation::EdgeWeight {
                finding,
                disease,
                theta,
            } => write!(
                f,
                "finding {finding}: edge to disease {disease} has theta {theta}; weights must be finite and > 0"
            ),
            Violation::UnknownParent { finding, disease } => {
                write!(f, "finding {finding}: parent disease {disease} does not exist")
            }
            Violation::DuplicateParent { finding, disease } => {
                write!(f, "finding {finding}: duplicate parent disease {disease}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyOrNetwork {
    diseases: Vec<DiseaseNode>,
    findings: Vec<FindingCPD>,
    /// For each disease, the `(finding, theta)` edges leaving it.
    children: Vec<Vec<(usize, f64)>>,
}

impl NoisyOrNetwork {
    /// Builds a network, rejecting it if any invariant fails.
    pub fn new(diseases: Vec<DiseaseNode>, findings: Vec<FindingCPD>) -> Result<Self> {
        let net = Self::new_unchecked(diseases, findings);
        let violations = validate(&net);
        if violations.is_empty() {
            Ok(net)
        } else {
            let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            Err(Error::InvalidNetwork(msg.join("; ")))
        }
    }

    /// Builds a network without checking invariants; see [`validate`].
    pub fn new_unchecked(diseases: Vec<DiseaseNode>, findings: Vec<FindingCPD>) -> Self {
        let mut children = vec![Vec::new(); diseases.len()];
        for f in &findings {
            for e in &f.parents {
                if let Some(c) = children.get_mut(e.disease) {
                    c.push((f.id, e.theta));
                }
            }
        }
        Self {
            diseases,
            findings,
            children,
        }
    }

    pub fn diseases(&self) -> &[DiseaseNode] {
        &self.diseases
    }

    pub fn findings(&self) -> &[FindingCPD] {
        &self.findings
    }

    pub fn n_diseases(&self) -> usize {
        self.diseases.len()
    }

    pub fn n_findings(&self) -> usize {
        self.findings.len()
    }

    pub fn finding(&self, id: usize) -> Result<&FindingCPD> {
        self.findings.get(id).ok_or(Error::UnknownFinding(id))
    }

    pub fn priors(&self) -> Vec<f64> {
        self.diseases.iter().map(|d| d.prior).collect()
    }

    /// Edges `(finding, theta)` leaving disease `j`.
    pub fn children(&self, j: usize) -> &[(usize, f64)] {
        &self.children[j]
    }

    /// Drops finding `id` and renumbers the findings after it.
    pub fn without_finding(&self, id: usize) -> Self {
        let findings = self
            .findings
            .iter()
            .filter(|f| f.id != id)
            .enumerate()
            .map(|(k, f)| FindingCPD {
                id: k,
                ..f.clone()
            })
            .collect();
        Self::new_unchecked(self.diseases.clone(), findings)
    }
}

/// Lists every invariant violation; an empty list means the network is well formed.
pub fn validate(network: &NoisyOrNetwork) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = network.diseases.len();
    for (position, d) in network.diseases.iter().enumerate() {
        if d.id != position {
            out.push(Violation::DiseaseId { position, id: d.id });
        }
        if !(d.prior > 0.0 && d.prior < 1.0) {
            out.push(Violation::Prior {
                disease: d.id,
                prior: d.prior.to_string(),
            });
        }
    }
    for (position, f) in network.findings.iter().enumerate() {
        if f.id != position {
            out.push(Violation::FindingId { position, id: f.id });
        }
        if !(f.leak >= 0.0 && f.leak.is_finite()) {
            out.push(Violation::Leak {
                finding: f.id,
                leak: f.leak.to_string(),
            });
        }
        let mut seen = BTreeSet::new();
        for e in &f.parents {
            if !(e.theta > 0.0 && e.theta.is_finite()) {
                out.push(Violation::EdgeWeight {
                    finding: f.id,
                    disease: e.disease,
                    theta: e.theta.to_string(),
                });
            }
            if e.disease >= n {
                out.push(Violation::UnknownParent {
                    finding: f.id,
                    disease: e.disease,
                });
            }
            if !seen.insert(e.disease) {
                out.push(Violation::DuplicateParent {
                    finding: f.id,
                    disease: e.disease,
                });
            }
        }
    }
    out
}

/// Observed findings: positive (`f_i = 1`) and negative (`f_i = 0`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Evidence {
    pub positive: BTreeSet<usize>,
    pub negative: BTreeSet<usize>,
}

impl Evidence {
    pub fn new(
        positive: impl IntoIterator<Item = usize>,
        negative: impl IntoIterator<Item = usize>,
    ) -> Self {
        Self {
            positive: positive.into_iter().collect(),
            negative: negative.into_iter().collect(),
        }
    }

    pub fn check(&self, network: &NoisyOrNetwork) -> Result<()> {
        if let Some(id) = self.positive.intersection(&self.negative).next() {
            return Err(Error::InvalidEvidence(format!(
                "finding {id} is both positive and negative"
            )));
        }
        for &id in self.positive.iter().chain(&self.negative) {
            network.finding(id)?;
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("evidence serializes")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiseaseRecord {
    id: usize,
    prior: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParentRecord {
    disease: usize,
    theta: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FindingRecord {
    id: usize,
    leak_theta: f64,
    parents: Vec<ParentRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkRecord {
    diseases: Vec<DiseaseRecord>,
    findings: Vec<FindingRecord>,
}

/// Parses the JSON network format, rejecting unknown fields and any
/// invariant violation.
pub fn load_network(bytes: &[u8]) -> Result<NoisyOrNetwork> {
    let record: NetworkRecord =
        serde_json::from_slice(bytes).map_err(|e| Error::Parse(e.to_string()))?;
    let diseases = record
        .diseases
        .into_iter()
        .map(|d| DiseaseNode {
            id: d.id,
            prior: d.prior,
        })
        .collect();
    let mut findings = Vec::with_capacity(record.findings.len());
    for (position, f) in record.findings.into_iter().enumerate() {
        let mut seen = BTreeSet::new();
        for (k, p) in f.parents.iter().enumerate() {
            if !seen.insert(p.disease) {
                return Err(Error::Parse(format!(
                    "findings[{position}].parents[{k}]: finding {} lists disease {} twice",
                    f.id, p.disease
                )));
            }
        }
        let parents = f
            .parents
            .into_iter()
            .map(|p| Edge {
                disease: p.disease,
                theta: p.theta,
            })
            .collect();
        findings.push(FindingCPD::new(f.id, f.leak_theta, parents));
    }
    let net = NoisyOrNetwork::new_unchecked(diseases, findings);
    let violations = validate(&net);
    if !violations.is_empty() {
        let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(Error::Parse(msg.join("; ")));
    }
    Ok(net)
}

pub fn save_network(network: &NoisyOrNetwork) -> Vec<u8> {
    let record = NetworkRecord {
        diseases: network
            .diseases
            .iter()
            .map(|d| DiseaseRecord {
                id: d.id,
                prior: d.prior,
            })
            .collect(),
        findings: network
            .findings
            .iter()
            .map(|f| FindingRecord {
                id: f.id,
                leak_theta: f.leak,
                parents: f
                    .parents
                    .iter()
                    .map(|e| ParentRecord {
                        disease: e.disease,
                        theta: e.theta,
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_vec(&record).expect("network serializes")
}

/// Parameters of the synthetic network generator. Priors are drawn
/// log-uniformly; edge and leak causal probabilities uniformly in `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_diseases: usize,
    pub n_findings: usize,
    pub edges_per_finding: (usize, usize),
    pub prior_range: (f64, f64),
    pub q_range: (f64, f64),
    pub leak_range: (f64, f64),
}

impl Default for SyntheticSpec {
    /// Roughly the scale of a large diagnostic knowledge base: 600 diseases,
    /// 4000 findings.
    fn default() -> Self {
        Self {
            n_diseases: 600,
            n_findings: 4000,
            edges_per_finding: (1, 20),
            prior_range: (1e-4, 1e-1),
            q_range: (0.2, 0.95),
            leak_range: (0.0, 0.15),
        }
    }
}

impl SyntheticSpec {
    /// Desk-scale network with the default parameter distributions.
    pub fn small(n_diseases: usize, n_findings: usize, max_edges: usize) -> Self {
        Self {
            n_diseases,
            n_findings,
            edges_per_finding: (1, max_edges.min(n_diseases)),
            ..Self::default()
        }
    }

    fn check(&self) -> Result<()> {
        let (lo, hi) = self.edges_per_finding;
        if self.n_diseases == 0 {
            return Err(Error::Domain("n_diseases must be >= 1".into()));
        }
        if lo == 0 || lo > hi {
            return Err(Error::Domain(format!("edges_per_finding range ({lo}, {hi}) invalid")));
        }
        if hi > self.n_diseases {
            return Err(Error::Domain(format!(
                "edges_per_finding upper bound {hi} exceeds n_diseases {}",
                self.n_diseases
            )));
        }
        let (plo, phi) = self.prior_range;
        if !(plo > 0.0 && plo <= phi && phi < 1.0) {
            return Err(Error::Domain(format!("prior_range ({plo}, {phi}) invalid")));
        }
        let (qlo, qhi) = self.q_range;
        if !(qlo > 0.0 && qlo <= qhi && qhi < 1.0) {
            return Err(Error::Domain(format!("q_range ({qlo}, {qhi}) invalid")));
        }
        let (llo, lhi) = self.leak_range;
        if !(llo >= 0.0 && llo <= lhi && lhi < 1.0) {
            return Err(Error::Domain(format!("leak_range ({llo}, {lhi}) invalid")));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Draws a random network; a pure function of `(spec, seed)`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<NoisyOrNetwork> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (log_lo, log_hi) = (spec.prior_range.0.ln(), spec.prior_range.1.ln());
    let diseases = (0..spec.n_diseases)
        .map(|id| DiseaseNode {
            id,
            prior: uniform(&mut rng, (log_lo, log_hi)).exp(),
        })
        .collect();
    let (emin, emax) = spec.edges_per_finding;
    let mut findings = Vec::with_capacity(spec.n_findings);
    for id in 0..spec.n_findings {
        let leak = q_to_theta(uniform(&mut rng, spec.leak_range))?;
        let k = rng.gen_range(emin..=emax);
        let parents = sample(&mut rng, spec.n_diseases, k)
            .into_iter()
            .map(|disease| {
                let q = uniform(&mut rng, spec.q_range);
                q_to_theta(q).map(|theta| Edge { disease, theta })
            })
            .collect::<Result<Vec<_>>>()?;
        findings.push(FindingCPD::new(id, leak, parents));
    }
    NoisyOrNetwork::new(diseases, findings)
}

/// Shape of a synthetic diagnostic case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseShape {
    pub n_positive: usize,
    pub n_negative: usize,
    /// Diseases forced present when simulating the patient.
    pub n_present: usize,
}

/// Simulates a patient: forces `n_present` random diseases on, samples the
/// rest from their priors, samples every finding from its noisy-OR, then
/// reports `n_positive` positive and `n_negative` negative findings (topping
/// up from the unsampled pool when the simulation produced too few).
pub fn generate_case(network: &NoisyOrNetwork, shape: &CaseShape, seed: u64) -> Result<Evidence> {
    let m = network.n_findings();
    if shape.n_positive + shape.n_negative > m {
        return Err(Error::Domain(format!(
            "case asks for {} observed findings but the network has {m}",
            shape.n_positive + shape.n_negative
        )));
    }
    if shape.n_present > network.n_diseases() {
        return Err(Error::Domain("n_present exceeds n_diseases".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut present: Vec<bool> = network
        .diseases()
        .iter()
        .map(|d| rng.gen::<f64>() < d.prior)
        .collect();
    for j in sample(&mut rng, network.n_diseases(), shape.n_present) {
        present[j] = true;
    }
    let mut pos_pool = Vec::new();
    let mut neg_pool = Vec::new();
    for f in network.findings() {
        let p_on = -(-f.activation(&present)).exp_m1();
        if rng.gen::<f64>() < p_on {
            pos_pool.push(f.id);
        } else {
            neg_pool.push(f.id);
        }
    }
    let mut positive = pick(&mut rng, &pos_pool, shape.n_positive);
    let mut negative = pick(&mut rng, &neg_pool, shape.n_negative);
    let mut rest: Vec<usize> = (0..m)
        .filter(|id| !positive.contains(id) && !negative.contains(id))
        .collect();
    while positive.len() < shape.n_positive {
        let k = rng.gen_range(0..rest.len());
        positive.insert(rest.swap_remove(k));
    }
    while negative.len() < shape.n_negative {
        let k = rng.gen_range(0..rest.len());
        negative.insert(rest.swap_remove(k));
    }
    Ok(Evidence { positive, negative })
}

fn pick(rng: &mut ChaCha8Rng, pool: &[usize], n: usize) -> BTreeSet<usize> {
    let n = n.min(pool.len());
    sample(rng, pool.len(), n).into_iter().map(|k| pool[k]).collect()
}
