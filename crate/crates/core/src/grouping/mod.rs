//! Node grouping: gradient snapshots, group divergences, the assign/update
//! costs and the k-medoids grouper with its exact and baseline counterparts.

mod kmedoids;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::data::Partition;
use crate::error::{Error, Result};
use crate::models::{self, weighted_sum, ModelParams, Weighted};
use crate::network::Topology;
use crate::rng::{self, purpose};

pub use kmedoids::{
    brute_force_grouping, edge_grouping, node_grouping, random_membership, total_assign_cost, GroupingOutcome,
};

/// Node-to-group assignment plus one medoid (aggregation server) per group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Membership {
    /// `assign[i]` is the group of node `i`.
    pub assign: Vec<usize>,
    /// `medoids[k]` is the medoid node of group `k`.
    pub medoids: Vec<usize>,
}

impl Membership {
    pub fn new(assign: Vec<usize>, medoids: Vec<usize>) -> Result<Self> {
        let m = Membership { assign, medoids };
        m.validate()?;
        Ok(m)
    }

    /// Every node in group 0 with node 0 as medoid.
    pub fn single(num_nodes: usize) -> Self {
        Membership { assign: vec![0; num_nodes], medoids: vec![0] }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.medoids.len();
        if k == 0 || self.assign.is_empty() {
            return Err(Error::Invariant("membership needs at least one group and one node".into()));
        }
        if let Some((i, g)) = self.assign.iter().enumerate().find(|(_, &g)| g >= k) {
            return Err(Error::Invariant(format!("node {i} assigned to missing group {g}")));
        }
        for (g, &m) in self.medoids.iter().enumerate() {
            if self.assign.get(m) != Some(&g) {
                return Err(Error::Invariant(format!("medoid {m} of group {g} is not a member")));
            }
        }
        Ok(())
    }

    pub fn num_groups(&self) -> usize {
        self.medoids.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.assign.len()
    }

    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.assign.len()).filter(|&i| self.assign[i] == k).collect()
    }

    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); self.num_groups()];
        for (i, &k) in self.assign.iter().enumerate() {
            g[k].push(i);
        }
        g
    }
}

/// Per-node gradients at a common model together with their data weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSnapshot {
    pub per_node: Vec<ModelParams>,
    pub global: ModelParams,
    /// |D_i| / |D|.
    pub weights: Vec<f64>,
}

impl GradientSnapshot {
    /// Forms the global gradient as the weighted sum of `per_node`.
    pub fn new(per_node: Vec<ModelParams>, weights: Vec<f64>) -> Result<Self> {
        if per_node.is_empty() || per_node.len() != weights.len() {
            return Err(Error::Shape(format!("{} gradients for {} weights", per_node.len(), weights.len())));
        }
        let terms: Vec<Weighted<'_>> = per_node.iter().zip(&weights).enumerate().map(|(i, (g, &w))| Weighted::new(i, g, w)).collect();
        let global = weighted_sum(&terms)?;
        Ok(GradientSnapshot { per_node, global, weights })
    }

    pub fn num_nodes(&self) -> usize {
        self.per_node.len()
    }
}

/// Gradients of every node's loss at `params`. Nodes holding more than
/// `batch_cap` examples use a seeded subsample of that size.
pub fn snapshot(params: &ModelParams, partition: &Partition, batch_cap: usize, seed: u64) -> Result<GradientSnapshot> {
    if batch_cap == 0 {
        return Err(Error::Domain("batch_cap must be positive".into()));
    }
    let per_node = partition
        .nodes
        .iter()
        .enumerate()
        .map(|(i, node)| {
            if node.examples.len() <= batch_cap {
                models::gradient(params, &node.examples)
            } else {
                let mut rng = rng::stream(seed, purpose::SNAPSHOT, i as u64);
                models::loss_and_gradient_iter(params, node.examples.choose_multiple(&mut rng, batch_cap)).map(|(_, g)| g)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    GradientSnapshot::new(per_node, partition.weights())
}

fn weighted_mean(snap: &GradientSnapshot, members: impl IntoIterator<Item = usize>) -> Option<Vec<f64>> {
    let mut acc = vec![0.0; snap.global.len()];
    let mut total = 0.0;
    for j in members {
        let w = snap.weights[j];
        total += w;
        for (a, g) in acc.iter_mut().zip(snap.per_node[j].values()) {
            *a += w * g;
        }
    }
    if total <= 0.0 {
        return None;
    }
    acc.iter_mut().for_each(|a| *a /= total);
    Some(acc)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_membership(snap: &GradientSnapshot, m: &Membership) -> Result<()> {
    if m.num_nodes() != snap.num_nodes() {
        return Err(Error::Shape(format!("membership covers {} nodes, snapshot {}", m.num_nodes(), snap.num_nodes())));
    }
    Ok(())
}

/// Δ^k = ‖∇F^k − ∇F‖, where group `k` optionally gains node `tentative`
/// (which leaves its current group).
pub fn group_divergence(snap: &GradientSnapshot, membership: &Membership, k: usize, tentative: Option<usize>) -> Result<f64> {
    check_membership(snap, membership)?;
    if k >= membership.num_groups() {
        return Err(Error::Domain(format!("group {k} does not exist")));
    }
    if let Some(i) = tentative {
        if i >= snap.num_nodes() {
            return Err(Error::Domain(format!("node {i} does not exist")));
        }
    }
    let members = (0..snap.num_nodes()).filter(|&j| membership.assign[j] == k || Some(j) == tentative);
    let mean = weighted_mean(snap, members).ok_or_else(|| Error::Domain(format!("group {k} is empty")))?;
    Ok(distance(&mean, snap.global.values()))
}

/// Local-to-group and group-to-global divergences of a membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergences {
    pub delta: f64,
    #[serde(rename = "Delta")]
    pub big_delta: f64,
    /// δ_i^k for every node.
    pub per_node: Vec<f64>,
    /// Δ^k for every group (0 for an empty group).
    pub per_group: Vec<f64>,
}

/// δ = Σ_k Σ_{i∈k} (|D_i|/|D|) ‖∇F_i − ∇F^k‖ and Δ = Σ_k (|D^k|/|D|) ‖∇F^k − ∇F‖.
pub fn divergences(snap: &GradientSnapshot, membership: &Membership) -> Result<Divergences> {
    check_membership(snap, membership)?;
    let mut out = Divergences {
        delta: 0.0,
        big_delta: 0.0,
        per_node: vec![0.0; snap.num_nodes()],
        per_group: vec![0.0; membership.num_groups()],
    };
    for (k, members) in membership.groups().into_iter().enumerate() {
        let Some(mean) = weighted_mean(snap, members.iter().copied()) else {
            continue;
        };
        let group_weight: f64 = members.iter().map(|&i| snap.weights[i]).sum();
        out.per_group[k] = distance(&mean, snap.global.values());
        out.big_delta += group_weight * out.per_group[k];
        for &i in &members {
            out.per_node[i] = distance(snap.per_node[i].values(), &mean);
            out.delta += snap.weights[i] * out.per_node[i];
        }
    }
    Ok(out)
}

/// How the IID part of the assign cost treats the node being placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignReading {
    /// Δ^k is evaluated with the node moved into group k.
    #[default]
    Tentative,
    /// Δ^k of group k as it currently stands.
    Static,
}

/// Normalizing constants, fixed to the first raw value each cost takes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Normalizers {
    pub assign_iid: Option<f64>,
    pub assign_comm: Option<f64>,
    pub update_iid: Option<f64>,
    pub update_comm: Option<f64>,
}

/// Raw first values at or below this are treated as zero when fixing a
/// normalizer; rounding noise in a zero divergence would otherwise blow the
/// cost up.
const NORMALIZER_FLOOR: f64 = 1e-12;

fn freeze(slot: &mut Option<f64>, raw: f64) -> f64 {
    *slot.get_or_insert(if raw.abs() <= NORMALIZER_FLOOR { 1.0 } else { raw })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub alpha_iid: f64,
    pub alpha_comm: f64,
    #[serde(default)]
    pub reading: AssignReading,
    #[serde(default)]
    pub normalizers: Normalizers,
}

impl CostWeights {
    pub fn new(alpha_iid: f64, alpha_comm: f64) -> Result<Self> {
        let ok = |a: f64| a.is_finite() && a >= 0.0;
        if !ok(alpha_iid) || !ok(alpha_comm) || alpha_iid + alpha_comm <= 0.0 {
            return Err(Error::config("grouping.alpha", "weights must be nonnegative with a positive sum"));
        }
        Ok(CostWeights { alpha_iid, alpha_comm, reading: AssignReading::Tentative, normalizers: Normalizers::default() })
    }

    pub fn with_reading(mut self, reading: AssignReading) -> Self {
        self.reading = reading;
        self
    }

    pub fn with_normalizers(mut self, normalizers: Normalizers) -> Self {
        self.normalizers = normalizers;
        self
    }

    /// Same alphas, normalizers not yet fixed.
    pub fn fresh(&self) -> Self {
        CostWeights { normalizers: Normalizers::default(), ..self.clone() }
    }
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights::new(0.5, 0.5).expect("valid defaults")
    }
}

/// Raw (unnormalized) IID and communication parts of the assign cost.
pub(crate) fn assign_parts(snap: &GradientSnapshot, topo: &Topology, m: &Membership, reading: AssignReading, i: usize, k: usize) -> Result<(f64, f64)> {
    let tentative = match reading {
        AssignReading::Tentative => Some(i),
        AssignReading::Static => None,
    };
    let iid = group_divergence(snap, m, k, tentative)?;
    let comm = topo.hop(i, m.medoids[k]) as f64;
    Ok((iid, comm))
}

/// Cost of placing node `i` in group `k`: weighted Δ^k plus the hop count to
/// the group's medoid, each divided by its normalizer.
pub fn cost_assign(snap: &GradientSnapshot, topo: &Topology, membership: &Membership, weights: &mut CostWeights, i: usize, k: usize) -> Result<f64> {
    if topo.num_nodes() < snap.num_nodes() {
        return Err(Error::Shape("topology has fewer nodes than the snapshot".into()));
    }
    let (iid, comm) = assign_parts(snap, topo, membership, weights.reading, i, k)?;
    let c_iid = freeze(&mut weights.normalizers.assign_iid, iid);
    let c_comm = freeze(&mut weights.normalizers.assign_comm, comm);
    Ok(weights.alpha_iid * iid / c_iid + weights.alpha_comm * comm / c_comm)
}

/// Cost of making member `i` the medoid of group `k`.
pub fn cost_update(snap: &GradientSnapshot, topo: &Topology, membership: &Membership, weights: &mut CostWeights, i: usize, k: usize) -> Result<f64> {
    check_membership(snap, membership)?;
    if membership.assign.get(i) != Some(&k) {
        return Err(Error::Domain(format!("node {i} is not in group {k}")));
    }
    let iid = snap.weights[i] * snap.per_node[i].distance(&snap.global);
    let comm: u64 = membership.members(k).iter().map(|&j| topo.hop(i, j) as u64).sum();
    let comm = comm as f64;
    let c_iid = freeze(&mut weights.normalizers.update_iid, iid);
    let c_comm = freeze(&mut weights.normalizers.update_comm, comm);
    Ok(weights.alpha_iid * iid / c_iid + weights.alpha_comm * comm / c_comm)
}
