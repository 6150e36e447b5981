//! Switch topologies, host hop distances and the analytic delay model that
//! turns aggregation rounds and local steps into simulated seconds.

mod build;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use build::{build_fat_tree, build_jellyfish, ring};

/// Default link speed, 10 MB/s.
pub const SLOW_LINK: f64 = 10e6;
/// 100 MB/s.
pub const FAST_LINK: f64 = 100e6;
/// Default processing speed, 5 GFLOPS.
pub const SLOW_PROC: f64 = 5e9;
/// 250 GFLOPS.
pub const FAST_PROC: f64 = 250e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Speeds {
    /// Bytes per second on every link.
    pub link: f64,
    /// FLOP per second on every node.
    pub proc: f64,
}

impl Default for Speeds {
    fn default() -> Self {
        Speeds { link: SLOW_LINK, proc: SLOW_PROC }
    }
}

impl Speeds {
    fn validate(&self) -> Result<()> {
        if !(self.link.is_finite() && self.link > 0.0) {
            return Err(Error::config("link_speed", "must be positive"));
        }
        if !(self.proc.is_finite() && self.proc > 0.0) {
            return Err(Error::config("proc_speed", "must be positive"));
        }
        Ok(())
    }
}

/// Node `i` is placed on logical edge `i mod num_edges`.
pub fn round_robin(num_nodes: usize, num_edges: usize) -> Vec<usize> {
    (0..num_nodes).map(|i| i % num_edges.max(1)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    switches: Vec<Vec<usize>>,
    hosts: Vec<usize>,
    hop: Vec<Vec<u32>>,
    speeds: Speeds,
}

impl Topology {
    /// Attaches node `i` to switch `hosts[i]` and computes host hop counts by
    /// BFS. Two hosts on one switch are 2 hops apart.
    pub fn from_switch_graph(switches: Vec<Vec<usize>>, hosts: Vec<usize>, speeds: Speeds) -> Result<Self> {
        speeds.validate()?;
        let n = switches.len();
        if n == 0 || hosts.is_empty() {
            return Err(Error::config("topology", "needs at least one switch and one host"));
        }
        for (s, adj) in switches.iter().enumerate() {
            for &t in adj {
                if t >= n || t == s {
                    return Err(Error::config("topology.switches", format!("bad link {s}-{t}")));
                }
                if !switches[t].contains(&s) {
                    return Err(Error::config("topology.switches", format!("link {s}-{t} is not symmetric")));
                }
            }
        }
        if let Some(&s) = hosts.iter().find(|&&s| s >= n) {
            return Err(Error::config("topology.hosts", format!("switch {s} does not exist")));
        }
        let used: BTreeSet<usize> = hosts.iter().copied().collect();
        let mut dist = BTreeMap::new();
        for &s in &used {
            let d = bfs(&switches, s);
            if d.iter().any(|x| x.is_none()) {
                return Err(Error::config("topology", "switch graph is disconnected"));
            }
            dist.insert(s, d);
        }
        let hop = hosts
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                hosts
                    .iter()
                    .enumerate()
                    .map(|(j, &b)| if i == j { 0 } else { dist[&a][b].expect("connected") + 2 })
                    .collect()
            })
            .collect();
        Ok(Topology { switches, hosts, hop, speeds })
    }

    pub fn num_nodes(&self) -> usize {
        self.hosts.len()
    }

    pub fn speeds(&self) -> Speeds {
        self.speeds
    }

    pub fn hop(&self, a: usize, b: usize) -> u32 {
        self.hop[a][b]
    }

    pub fn hop_matrix(&self) -> &[Vec<u32>] {
        &self.hop
    }

    /// Switch each node is attached to.
    pub fn switch_of(&self, node: usize) -> usize {
        self.hosts[node]
    }

    pub fn switches(&self) -> &[Vec<usize>] {
        &self.switches
    }

    pub fn mean_hop(&self) -> f64 {
        let n = self.num_nodes();
        if n < 2 {
            return 0.0;
        }
        let total: u64 = self.hop.iter().flatten().map(|&h| h as u64).sum();
        total as f64 / (n * (n - 1)) as f64
    }

    /// Copy with a different link speed.
    pub fn with_speeds(&self, speeds: Speeds) -> Result<Self> {
        speeds.validate()?;
        Ok(Topology { speeds, ..self.clone() })
    }

    pub fn to_doc(&self) -> TopologyDoc {
        TopologyDoc {
            switches: self.switches.clone(),
            hosts: self.hosts.clone(),
            link_speed: self.speeds.link,
            proc_speed: self.speeds.proc,
        }
    }

    pub fn from_doc(doc: &TopologyDoc) -> Result<Self> {
        Topology::from_switch_graph(
            doc.switches.clone(),
            doc.hosts.clone(),
            Speeds { link: doc.link_speed, proc: doc.proc_speed },
        )
    }

    fn check_node(&self, node: usize) -> Result<()> {
        if node >= self.num_nodes() {
            return Err(Error::Domain(format!("node {node} is not in the topology")));
        }
        Ok(())
    }
}

fn bfs(adj: &[Vec<usize>], src: usize) -> Vec<Option<u32>> {
    let mut dist = vec![None; adj.len()];
    dist[src] = Some(0);
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].expect("queued nodes have distances");
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// JSON form of a topology: switch adjacency plus host placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDoc {
    pub switches: Vec<Vec<usize>>,
    pub hosts: Vec<usize>,
    pub link_speed: f64,
    pub proc_speed: f64,
}

/// How hop counts of the individual transfers combine into one round's delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayMode {
    /// Transfers share the network: every message-hop costs one model
    /// transmission time, and they add up.
    #[default]
    Serialized,
    /// Transfers run in parallel; the farthest participant gates the round.
    Bottleneck,
}

/// Floating-point operations per parameter per example for one forward and
/// backward pass.
pub const FLOPS_PER_PARAM: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub param_count: usize,
    /// 8 bytes per parameter.
    pub model_bytes: u64,
    pub mode: DelayMode,
}

impl DelayModel {
    pub fn for_params(param_count: usize) -> Self {
        DelayModel { param_count, model_bytes: 8 * param_count as u64, mode: DelayMode::default() }
    }

    pub fn with_mode(mut self, mode: DelayMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn flops_per_step(&self, batch: usize) -> f64 {
        FLOPS_PER_PARAM * self.param_count as f64 * batch as f64
    }
}

/// Seconds for one aggregation round: participants upload to `server` and the
/// result is broadcast back. With `combined`, the participants on each edge
/// switch first aggregate at a local server (the server itself if it sits on
/// that switch, otherwise the lowest-id participant there) and only one model
/// per edge crosses the network.
pub fn agg_delay(topo: &Topology, dm: &DelayModel, participants: &[usize], server: usize, combined: bool) -> Result<f64> {
    topo.check_node(server)?;
    if participants.is_empty() {
        return Err(Error::Domain("aggregation needs at least one participant".into()));
    }
    for &p in participants {
        topo.check_node(p)?;
    }
    let members: BTreeSet<usize> = participants.iter().copied().collect();
    let per_hop = dm.model_bytes as f64 / topo.speeds.link;
    let hops = |a: usize, b: usize| topo.hop(a, b) as u64;
    let combine = |acc: u64, h: u64| match dm.mode {
        DelayMode::Serialized => acc + h,
        DelayMode::Bottleneck => acc.max(h),
    };

    if !combined {
        let h = members.iter().map(|&p| hops(p, server)).fold(0, combine);
        return Ok(per_hop * (2 * h) as f64);
    }

    let mut by_edge: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &p in &members {
        by_edge.entry(topo.switch_of(p)).or_default().push(p);
    }
    let server_switch = topo.switch_of(server);
    let (mut intra, mut inter) = (0u64, 0u64);
    for (switch, nodes) in &by_edge {
        let local = if *switch == server_switch { server } else { nodes[0] };
        intra = nodes.iter().map(|&p| hops(p, local)).fold(intra, combine);
        inter = combine(inter, hops(local, server));
    }
    Ok(per_hop * (2 * intra) as f64 + per_hop * (2 * inter) as f64)
}

/// Seconds of local computation for `steps` minibatch steps of size `batch`.
pub fn compute_delay(topo: &Topology, dm: &DelayModel, steps: usize, batch: usize) -> f64 {
    steps as f64 * dm.flops_per_step(batch) / topo.speeds.proc
}

#[cfg(test)]
mod tests;
