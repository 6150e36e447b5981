//! Federated training on a simulated clock: FedAvg, two-tier group FL and
//! FedAvg-IC, with optional virtual-model tracking.

mod sim;
mod trace;
mod virtual_model;

use serde::{Deserialize, Serialize};

use crate::data::Partition;
use crate::error::{Error, Result};
use crate::grouping::{self, CostWeights, Divergences, Membership};
use crate::models::{ModelParams, ModelSpec};
use crate::network::{agg_delay, DelayMode, DelayModel, Topology};

pub use trace::{read_csv, Event, RunStatus, RunTrace, TraceRow, VirtualRow};
pub use virtual_model::{virtual_step, VirtualTrace};

use sim::Plan;

/// Aggregation cadence. Group rounds every `tau1` steps, global rounds every
/// `tau1 * tau2`. FedAvg-IC starts at `tau1 = tau2 = 1` and switches to
/// `(tau1_0, tau2_0)` once its nodes are grouped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub tau1: usize,
    pub tau2: usize,
    pub steps: usize,
    pub tau1_0: usize,
    pub tau2_0: usize,
}

impl Schedule {
    /// One tier: global aggregation every `tau` steps.
    pub fn fedavg(tau: usize, steps: usize) -> Self {
        Schedule { tau1: tau, tau2: 1, steps, tau1_0: tau, tau2_0: 1 }
    }

    pub fn group(tau1: usize, tau2: usize, steps: usize) -> Self {
        Schedule { tau1, tau2, steps, tau1_0: tau1, tau2_0: tau2 }
    }

    pub fn fedavg_ic(tau1_0: usize, tau2_0: usize, steps: usize) -> Self {
        Schedule { tau1: 1, tau2: 1, steps, tau1_0, tau2_0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("tau1", self.tau1), ("tau2", self.tau2), ("tau1_0", self.tau1_0), ("tau2_0", self.tau2_0), ("steps", self.steps)] {
            if v == 0 {
                return Err(Error::config(format!("schedule.{field}"), "must be positive"));
            }
        }
        if self.steps < self.tau1 * self.tau2 || self.steps < self.tau1_0 * self.tau2_0 {
            return Err(Error::config("schedule.steps", "must cover at least one global interval"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Full local dataset every step.
    Deterministic,
    /// Minibatches drawn without replacement, reshuffled every local epoch.
    #[default]
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub eta: f64,
    /// Multiplier applied to the learning rate after every global round.
    pub decay: f64,
    pub batch_size: usize,
    pub mode: GradientMode,
    /// Per-node example cap for the gradient snapshot used by grouping.
    pub snapshot_cap: usize,
    pub max_steady: usize,
    pub delay_mode: DelayMode,
    /// Node hosting the global server.
    pub server: usize,
    /// Combined aggregation for FedAvg-IC.
    pub ic_combined: bool,
    /// Fill the δ/Δ/cost columns of every row.
    pub track_divergences: bool,
    /// Track virtual models and emit a row per step.
    pub track_virtual: bool,
    /// Stop after the first aggregation at or past this simulated time.
    pub max_seconds: Option<f64>,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            eta: 0.1,
            decay: 0.99,
            batch_size: 128,
            mode: GradientMode::Stochastic,
            snapshot_cap: 128,
            max_steady: 1,
            delay_mode: DelayMode::Serialized,
            server: 0,
            ic_combined: true,
            track_divergences: true,
            track_virtual: false,
            max_seconds: None,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::config("hyper.eta", "must be finite and nonnegative"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::config("hyper.decay", "must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("hyper.batch_size", "must be positive"));
        }
        if self.snapshot_cap == 0 {
            return Err(Error::config("hyper.snapshot_cap", "must be positive"));
        }
        if self.max_steady == 0 {
            return Err(Error::config("hyper.max_steady", "must be positive"));
        }
        if self.max_seconds.is_some_and(|m| m.is_nan() || m <= 0.0) {
            return Err(Error::config("hyper.max_seconds", "must be positive"));
        }
        Ok(())
    }
}

/// Models and clock of a run in progress.
#[derive(Debug, Clone, PartialEq)]
pub struct FedState {
    pub locals: Vec<ModelParams>,
    pub groups: Vec<ModelParams>,
    pub global: ModelParams,
    pub t: usize,
    pub clock: f64,
    pub eta: f64,
    pub global_rounds: usize,
}

impl FedState {
    pub fn new(init: ModelParams, num_nodes: usize, num_groups: usize, eta: f64) -> Self {
        FedState {
            locals: vec![init.clone(); num_nodes],
            groups: vec![init.clone(); num_groups],
            global: init,
            t: 0,
            clock: 0.0,
            eta,
            global_rounds: 0,
        }
    }

    /// w̄ = Σ_i (|D_i|/|D|) w_i, the model every node would hold after a
    /// global aggregation now.
    pub fn averaged(&self, weights: &[f64]) -> Result<ModelParams> {
        sim::weighted(&self.locals, weights, 0..self.locals.len())
    }
}

/// Delay of one group round: groups aggregate in parallel at their medoids.
pub fn group_round_delay(topo: &Topology, dm: &DelayModel, membership: &Membership, combined: bool) -> Result<f64> {
    membership
        .groups()
        .iter()
        .zip(&membership.medoids)
        .try_fold(0.0f64, |acc, (members, &medoid)| Ok(acc.max(agg_delay(topo, dm, members, medoid, combined)?)))
}

/// Delay of one global round: every node exchanges with the global server,
/// whatever the grouping.
pub fn global_round_delay(topo: &Topology, dm: &DelayModel, num_nodes: usize, server: usize, combined: bool) -> Result<f64> {
    let all: Vec<usize> = (0..num_nodes).collect();
    agg_delay(topo, dm, &all, server, combined)
}

/// δ, Δ and their per-node/per-group terms with full-batch gradients at `params`.
pub fn measure_divergences(params: &ModelParams, partition: &Partition, membership: &Membership) -> Result<Divergences> {
    let snap = grouping::snapshot(params, partition, usize::MAX, 0)?;
    grouping::divergences(&snap, membership)
}

pub fn run_fedavg(partition: &Partition, topo: &Topology, spec: ModelSpec, schedule: Schedule, hyper: &Hyper, seed: u64) -> Result<RunTrace> {
    if schedule.tau2 != 1 {
        return Err(Error::config("schedule.tau2", "FedAvg has a single tier; use Schedule::fedavg"));
    }
    let plan = Plan::Fixed { membership: Membership::single(partition.num_nodes()), combined: false };
    sim::simulate("fedavg", partition, topo, spec, schedule, hyper, seed, plan)
}

#[allow(clippy::too_many_arguments)]
pub fn run_group_fl(
    partition: &Partition,
    topo: &Topology,
    spec: ModelSpec,
    membership: &Membership,
    schedule: Schedule,
    hyper: &Hyper,
    combined: bool,
    seed: u64,
) -> Result<RunTrace> {
    membership.validate()?;
    if membership.num_nodes() != partition.num_nodes() {
        return Err(Error::Shape(format!("membership covers {} nodes, partition has {}", membership.num_nodes(), partition.num_nodes())));
    }
    let plan = Plan::Fixed { membership: membership.clone(), combined };
    sim::simulate("group_fl", partition, topo, spec, schedule, hyper, seed, plan)
}

/// HierFAVG: group FL with one group per edge.
pub fn run_hierfavg(partition: &Partition, topo: &Topology, spec: ModelSpec, schedule: Schedule, hyper: &Hyper, seed: u64) -> Result<RunTrace> {
    let mut trace = run_group_fl(partition, topo, spec, &grouping::edge_grouping(partition), schedule, hyper, false, seed)?;
    trace.relabel("hierfavg");
    Ok(trace)
}

#[allow(clippy::too_many_arguments)]
pub fn run_fedavg_ic(
    partition: &Partition,
    topo: &Topology,
    spec: ModelSpec,
    schedule: Schedule,
    weights: &CostWeights,
    num_groups: usize,
    hyper: &Hyper,
    seed: u64,
) -> Result<RunTrace> {
    if num_groups == 0 || num_groups > partition.num_nodes() {
        return Err(Error::config("num_groups", format!("need 1 <= num_groups <= {}", partition.num_nodes())));
    }
    let plan = Plan::Grouping { weights: weights.fresh(), num_groups, combined: hyper.ic_combined };
    sim::simulate("fedavg_ic", partition, topo, spec, schedule, hyper, seed, plan)
}

#[cfg(test)]
mod tests;
