use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{cost_assign, cost_update, CostWeights, GradientSnapshot, Membership};
use crate::data::Partition;
use crate::error::{Error, Result};
use crate::network::Topology;
use crate::rng::{self, purpose};

const STEADY_TOL: f64 = 1e-9;
const MAX_ITERATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingOutcome {
    pub membership: Membership,
    /// Total assign cost after the initial assignment and after every
    /// accepted (update, reassign) iteration.
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
}

/// Σ_i Cost_A(i, z_i) for the membership as it stands.
pub fn total_assign_cost(snap: &GradientSnapshot, topo: &Topology, membership: &Membership, weights: &mut CostWeights) -> Result<f64> {
    (0..membership.num_nodes()).try_fold(0.0, |acc, i| Ok(acc + cost_assign(snap, topo, membership, weights, i, membership.assign[i])?))
}

fn argmin(costs: impl IntoIterator<Item = Result<(usize, f64)>>) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for c in costs {
        let (idx, cost) = c?;
        if best.is_none_or(|(_, b)| cost < b) {
            best = Some((idx, cost));
        }
    }
    best.map(|(i, _)| i).ok_or_else(|| Error::Invariant("argmin over an empty set".into()))
}

/// One sequential pass: every non-medoid node, in index order, moves to the
/// group of least assign cost.
fn assign_pass(snap: &GradientSnapshot, topo: &Topology, m: &mut Membership, weights: &mut CostWeights) -> Result<()> {
    for i in 0..m.num_nodes() {
        if m.medoids.contains(&i) {
            continue;
        }
        let k = argmin((0..m.num_groups()).map(|k| cost_assign(snap, topo, m, weights, i, k).map(|c| (k, c))))?;
        m.assign[i] = k;
    }
    Ok(())
}

fn update_pass(snap: &GradientSnapshot, topo: &Topology, m: &mut Membership, weights: &mut CostWeights) -> Result<()> {
    for k in 0..m.num_groups() {
        let members = m.members(k);
        let best = argmin(members.iter().map(|&i| cost_update(snap, topo, m, weights, i, k).map(|c| (i, c))))?;
        m.medoids[k] = best;
    }
    Ok(())
}

/// k-medoids over the combined assign/update costs. Medoids start at random
/// distinct nodes and stay in their own group, so no group is ever empty.
/// Stops when the total assign cost has been steady for `max_steady`
/// iterations, after 50 iterations, or when an iteration would raise the
/// cost (that iteration is discarded).
pub fn node_grouping(
    snap: &GradientSnapshot,
    topo: &Topology,
    num_groups: usize,
    weights: &mut CostWeights,
    seed: u64,
    max_steady: usize,
) -> Result<GroupingOutcome> {
    let n = snap.num_nodes();
    if num_groups == 0 || num_groups > n {
        return Err(Error::config("num_groups", format!("need 1 <= num_groups <= {n}")));
    }
    if max_steady == 0 {
        return Err(Error::config("max_steady", "must be positive"));
    }
    if topo.num_nodes() < n {
        return Err(Error::Shape("topology has fewer nodes than the snapshot".into()));
    }
    let mut rng = rng::stream(seed, purpose::GROUPING, 0);
    let mut medoids: Vec<usize> = (0..n).collect::<Vec<_>>().choose_multiple(&mut rng, num_groups).copied().collect();
    medoids.sort_unstable();
    let mut assign: Vec<usize> = (0..n).map(|_| rng.random_range(0..num_groups)).collect();
    for (k, &m) in medoids.iter().enumerate() {
        assign[m] = k;
    }
    let mut m = Membership { assign, medoids };

    assign_pass(snap, topo, &mut m, weights)?;
    let mut total = total_assign_cost(snap, topo, &m, weights)?;
    let mut trace = vec![total];
    let mut steady = 0;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let previous = m.clone();
        update_pass(snap, topo, &mut m, weights)?;
        assign_pass(snap, topo, &mut m, weights)?;
        let next = total_assign_cost(snap, topo, &m, weights)?;
        if next > total + STEADY_TOL {
            log::debug!("grouping iteration {iterations} raised the cost ({total} -> {next}); keeping the previous membership");
            m = previous;
            break;
        }
        trace.push(next);
        if (total - next).abs() < STEADY_TOL {
            steady += 1;
            if steady >= max_steady {
                break;
            }
        } else {
            steady = 0;
        }
        total = next;
    }
    m.validate()?;
    Ok(GroupingOutcome { membership: m, cost_trace: trace, iterations })
}

/// Member with the smallest hop sum to the rest of its group (lowest id on ties).
fn hop_medoid(topo: &Topology, members: &[usize]) -> usize {
    let mut best = (u64::MAX, usize::MAX);
    for &i in members {
        let s: u64 = members.iter().map(|&j| topo.hop(i, j) as u64).sum();
        if s < best.0 {
            best = (s, i);
        }
    }
    best.1
}

/// Calls `visit` with every assignment of `n` nodes to exactly `k` non-empty
/// groups, each listed once (restricted growth strings).
fn for_each_partition(n: usize, k: usize, visit: &mut dyn FnMut(&[usize]) -> Result<()>) -> Result<()> {
    fn rec(z: &mut Vec<usize>, n: usize, k: usize, used: usize, visit: &mut dyn FnMut(&[usize]) -> Result<()>) -> Result<()> {
        if z.len() == n {
            return if used == k { visit(z) } else { Ok(()) };
        }
        if k - used > n - z.len() {
            return Ok(());
        }
        for g in 0..(used + 1).min(k) {
            z.push(g);
            rec(z, n, k, used.max(g + 1), visit)?;
            z.pop();
        }
        Ok(())
    }
    rec(&mut Vec::with_capacity(n), n, k, 0, visit)
}

/// Exact minimizer of the total assign cost for tiny instances. Each group's
/// medoid is the member minimizing the summed hop distance, which is the
/// choice that minimizes the group's communication term.
pub fn brute_force_grouping(snap: &GradientSnapshot, topo: &Topology, num_groups: usize, weights: &mut CostWeights) -> Result<(Membership, f64)> {
    let n = snap.num_nodes();
    if n > 10 || num_groups > 3 {
        return Err(Error::Domain(format!("brute force limited to 10 nodes and 3 groups, got {n} and {num_groups}")));
    }
    if num_groups == 0 || num_groups > n {
        return Err(Error::Domain(format!("need 1 <= num_groups <= {n}")));
    }
    let mut best: Option<(Membership, f64)> = None;
    for_each_partition(n, num_groups, &mut |z| {
        let mut m = Membership { assign: z.to_vec(), medoids: vec![0; num_groups] };
        for (k, members) in m.groups().iter().enumerate() {
            m.medoids[k] = hop_medoid(topo, members);
        }
        let cost = total_assign_cost(snap, topo, &m, weights)?;
        if best.as_ref().is_none_or(|(_, b)| cost < *b) {
            best = Some((m, cost));
        }
        Ok(())
    })?;
    best.ok_or_else(|| Error::Invariant("no partition enumerated".into()))
}

/// One group per edge; the lowest node id on each edge is its medoid.
pub fn edge_grouping(partition: &Partition) -> Membership {
    let mut edges: Vec<usize> = partition.nodes.iter().map(|n| n.edge).collect();
    edges.sort_unstable();
    edges.dedup();
    let assign: Vec<usize> = partition
        .nodes
        .iter()
        .map(|n| edges.binary_search(&n.edge).expect("edge listed"))
        .collect();
    let medoids = (0..edges.len()).map(|k| assign.iter().position(|&g| g == k).expect("edge has a node")).collect();
    Membership { assign, medoids }
}

/// Uniformly random membership. Empty groups take the highest-id node of the
/// largest group. Medoids minimize the hop sum when a topology is given and
/// are the lowest member id otherwise.
pub fn random_membership(num_nodes: usize, num_groups: usize, topo: Option<&Topology>, seed: u64) -> Result<Membership> {
    if num_groups == 0 || num_groups > num_nodes {
        return Err(Error::config("num_groups", format!("need 1 <= num_groups <= {num_nodes}")));
    }
    let mut rng = rng::stream(seed, purpose::MEMBERSHIP, 0);
    let mut assign: Vec<usize> = (0..num_nodes).map(|_| rng.random_range(0..num_groups)).collect();
    loop {
        let mut sizes = vec![0usize; num_groups];
        for &g in &assign {
            sizes[g] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            break;
        };
        let largest = (0..num_groups).rev().max_by_key(|&k| sizes[k]).expect("groups exist");
        let donor = (0..num_nodes).rev().find(|&i| assign[i] == largest).expect("largest group is non-empty");
        assign[donor] = empty;
    }
    let mut m = Membership { assign, medoids: vec![0; num_groups] };
    for (k, members) in m.groups().iter().enumerate() {
        m.medoids[k] = match topo {
            Some(t) => hop_medoid(t, members),
            None => members[0],
        };
    }
    m.validate()?;
    Ok(m)
}
