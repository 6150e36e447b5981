use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{
    global_round_delay, group_round_delay, measure_divergences, virtual_step, Event, FedState, GradientMode, Hyper, RunStatus, RunTrace,
    Schedule, TraceRow, VirtualRow, VirtualTrace,
};
use crate::data::Partition;
use crate::error::{Error, Result};
use crate::grouping::{self, CostWeights, GroupingOutcome, Membership};
use crate::models::{self, weighted_sum, ModelParams, ModelSpec, Weighted};
use crate::network::{compute_delay, DelayModel, Topology};
use crate::rng::{self, purpose, Rng};

pub(crate) enum Plan {
    Fixed { membership: Membership, combined: bool },
    /// FedAvg-IC: aggregate globally every step until the first global round,
    /// then group once.
    Grouping { weights: CostWeights, num_groups: usize, combined: bool },
}

/// Σ_{i ∈ idx} weights[i] · models[i], summed in ascending node order.
pub(crate) fn weighted(models: &[ModelParams], weights: &[f64], idx: impl IntoIterator<Item = usize>) -> Result<ModelParams> {
    let terms: Vec<Weighted<'_>> = idx.into_iter().map(|i| Weighted::new(i, &models[i], weights[i])).collect();
    weighted_sum(&terms)
}

/// Data-weighted average of `members`' models. With `combined`, each edge
/// switch first forms its partial sum and the partial sums are then added,
/// which is the order of operations combined aggregation implies.
fn aggregate(models: &[ModelParams], sizes: &[f64], members: &[usize], topo: &Topology, combined: bool) -> Result<ModelParams> {
    let total: f64 = members.iter().map(|&i| sizes[i]).sum();
    let w: Vec<f64> = sizes.iter().map(|s| s / total).collect();
    if !combined {
        return weighted(models, &w, members.iter().copied());
    }
    let mut by_edge: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in members {
        by_edge.entry(topo.switch_of(i)).or_default().push(i);
    }
    let partials = by_edge
        .values()
        .map(|nodes| Ok((nodes[0], weighted(models, &w, nodes.iter().copied())?)))
        .collect::<Result<Vec<_>>>()?;
    let terms: Vec<Weighted<'_>> = partials.iter().map(|(key, m)| Weighted::new(*key, m, 1.0)).collect();
    weighted_sum(&terms)
}

/// Minibatches without replacement; the order is reshuffled once a local
/// epoch cannot supply a full batch.
struct Sampler {
    order: Vec<usize>,
    cursor: usize,
    rng: Rng,
}

impl Sampler {
    fn new(len: usize, seed: u64, node: usize) -> Self {
        let mut rng = rng::stream(seed, purpose::MINIBATCH, node as u64);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Sampler { order, cursor: 0, rng }
    }

    fn next(&mut self, batch: usize) -> &[usize] {
        let b = batch.min(self.order.len());
        if self.cursor + b > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let out = &self.order[self.cursor..self.cursor + b];
        self.cursor += b;
        out
    }
}

struct Recorder<'a> {
    algorithm: &'a str,
    seed: u64,
    partition: &'a Partition,
    topo: &'a Topology,
    hyper: &'a Hyper,
    weights: Vec<f64>,
    rows: Vec<TraceRow>,
    comm: f64,
    compute: f64,
    processed: usize,
}

impl Recorder<'_> {
    /// Appends a row for the current state. Returns false if the averaged
    /// model or its loss is no longer finite.
    fn row(&mut self, st: &FedState, membership: &Membership, event: Event) -> Result<bool> {
        let wbar = st.averaged(&self.weights)?;
        let train_loss = if wbar.is_finite() { models::loss(&wbar, &self.partition.train.examples)? } else { f64::NAN };
        let finite = train_loss.is_finite();
        let test_accuracy = match &self.partition.test {
            Some(test) if finite => models::accuracy(&wbar, &test.examples)?,
            _ => f64::NAN,
        };
        let (mut delta, mut big_delta, mut cost_iid, mut cost_comm) = (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
        if finite && self.hyper.track_divergences {
            let d = measure_divergences(&wbar, self.partition, membership)?;
            delta = d.delta;
            big_delta = d.big_delta;
            cost_iid = membership.assign.iter().map(|&k| d.per_group[k]).sum();
            cost_comm = membership.assign.iter().enumerate().map(|(i, &k)| self.topo.hop(i, membership.medoids[k]) as f64).sum();
        }
        self.rows.push(TraceRow {
            step: st.t,
            sim_seconds: st.clock,
            epoch: self.processed as f64 / self.partition.total_examples() as f64,
            train_loss,
            test_accuracy,
            delta,
            big_delta,
            cost_iid,
            cost_comm,
            algorithm: self.algorithm.to_string(),
            seed: self.seed,
            comm_seconds: self.comm,
            compute_seconds: self.compute,
            event: if finite { event } else { Event::Diverged },
        });
        Ok(finite)
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn simulate(
    algorithm: &str,
    partition: &Partition,
    topo: &Topology,
    spec: ModelSpec,
    schedule: Schedule,
    hyper: &Hyper,
    seed: u64,
    plan: Plan,
) -> Result<RunTrace> {
    schedule.validate()?;
    hyper.validate()?;
    spec.validate()?;
    let n = partition.num_nodes();
    if topo.num_nodes() < n {
        return Err(Error::Shape(format!("topology places {} nodes, partition has {n}", topo.num_nodes())));
    }
    if hyper.server >= n {
        return Err(Error::config("hyper.server", format!("node {} does not exist", hyper.server)));
    }
    let sizes: Vec<f64> = partition.nodes.iter().map(|d| d.examples.len() as f64).collect();
    let all: Vec<usize> = (0..n).collect();
    let dm = DelayModel::for_params(spec.param_count()).with_mode(hyper.delay_mode);
    let init = spec.init_params(&mut rng::stream(seed, purpose::INIT, 0));

    let (mut membership, combined, mut pending) = match plan {
        Plan::Fixed { membership, combined } => (membership, combined, None),
        Plan::Grouping { weights, num_groups, combined } => (Membership::single(n), combined, Some((weights, num_groups))),
    };
    let (mut tau1, mut tau2) = (schedule.tau1, schedule.tau2);
    let mut offset = 0;
    let mut st = FedState::new(init, n, membership.num_groups(), hyper.eta);
    let mut samplers: Vec<Sampler> = partition.nodes.iter().enumerate().map(|(i, d)| Sampler::new(d.examples.len(), seed, i)).collect();
    let mut vt = hyper.track_virtual.then(|| VirtualTrace::new(&st.global, membership.num_groups()));
    let mut virtual_rows = Vec::new();
    let mut global_models = Vec::new();
    let mut grouping_outcome: Option<GroupingOutcome> = None;
    let mut rec = Recorder {
        algorithm,
        seed,
        partition,
        topo,
        hyper,
        weights: partition.weights(),
        rows: Vec::new(),
        comm: 0.0,
        compute: 0.0,
        processed: 0,
    };
    let mut status = RunStatus::Complete;

    if !rec.row(&st, &membership, Event::Start)? {
        status = RunStatus::Diverged { step: 0, reason: "initial loss is not finite".into() };
    }

    for t in 1..=schedule.steps {
        if status != RunStatus::Complete {
            break;
        }
        if let Some(vt) = vt.as_mut() {
            virtual_step(vt, partition, &membership, st.eta)?;
        }
        let mut widest = 0;
        for (i, node) in partition.nodes.iter().enumerate() {
            let w = &st.locals[i];
            let g = match hyper.mode {
                GradientMode::Deterministic => {
                    widest = widest.max(node.examples.len());
                    rec.processed += node.examples.len();
                    models::gradient(w, &node.examples)?
                }
                GradientMode::Stochastic => {
                    let idx = samplers[i].next(hyper.batch_size);
                    widest = widest.max(idx.len());
                    rec.processed += idx.len();
                    models::loss_and_gradient_iter(w, idx.iter().map(|&j| &node.examples[j]))?.1
                }
            };
            st.locals[i] = w.axpy(-st.eta, &g);
        }
        let dt = compute_delay(topo, &dm, 1, widest);
        st.clock += dt;
        rec.compute += dt;
        st.t = t;
        if let Some(i) = st.locals.iter().position(|w| !w.is_finite()) {
            rec.row(&st, &membership, Event::Diverged)?;
            status = RunStatus::Diverged { step: t, reason: format!("local model of node {i} is not finite") };
            break;
        }

        if let Some(vt) = vt.as_ref() {
            virtual_rows.push(virtual_row(vt, &st, partition, &membership, &rec.weights, &sizes, topo)?);
        }

        let phase = t - offset;
        let event = if phase % (tau1 * tau2) == 0 {
            let w = aggregate(&st.locals, &sizes, &all, topo, combined)?;
            st.locals.iter_mut().for_each(|l| *l = w.clone());
            st.groups.iter_mut().for_each(|g| *g = w.clone());
            st.global = w;
            let dt = global_round_delay(topo, &dm, n, hyper.server, combined)?;
            st.clock += dt;
            rec.comm += dt;
            st.global_rounds += 1;
            st.eta = hyper.eta * hyper.decay.powi(st.global_rounds as i32);
            global_models.push((t, st.global.clone()));
            if let Some(vt) = vt.as_mut() {
                vt.sync_global(&st.global);
            }
            Event::Global
        } else if phase % tau1 == 0 {
            for (k, members) in membership.groups().iter().enumerate() {
                let wk = aggregate(&st.locals, &sizes, members, topo, combined)?;
                for &i in members {
                    st.locals[i] = wk.clone();
                }
                st.groups[k] = wk;
            }
            let dt = group_round_delay(topo, &dm, &membership, combined)?;
            st.clock += dt;
            rec.comm += dt;
            if let Some(vt) = vt.as_mut() {
                vt.sync_groups(&st.groups);
            }
            Event::Group
        } else {
            continue;
        };
        if !rec.row(&st, &membership, event)? {
            status = RunStatus::Diverged { step: t, reason: "training loss is not finite".into() };
            break;
        }

        if event == Event::Global {
            if let Some((mut weights, num_groups)) = pending.take() {
                let snap = grouping::snapshot(&st.global, partition, hyper.snapshot_cap, seed)?;
                let outcome = grouping::node_grouping(&snap, topo, num_groups, &mut weights, seed, hyper.max_steady)?;
                // the gradient exchange is costed as one more global round
                let widest = partition.nodes.iter().map(|d| d.examples.len().min(hyper.snapshot_cap)).max().unwrap_or(0);
                let compute = compute_delay(topo, &dm, 1, widest);
                let comm = global_round_delay(topo, &dm, n, hyper.server, combined)?;
                st.clock += compute + comm;
                rec.compute += compute;
                rec.comm += comm;
                membership = outcome.membership.clone();
                st.groups = vec![st.global.clone(); membership.num_groups()];
                if let Some(vt) = vt.as_mut() {
                    vt.regroup(&st.global, membership.num_groups());
                }
                tau1 = schedule.tau1_0;
                tau2 = schedule.tau2_0;
                offset = t;
                log::debug!("{algorithm}: grouped {n} nodes into {num_groups} groups after {} iterations", outcome.iterations);
                grouping_outcome = Some(outcome);
                rec.row(&st, &membership, Event::Grouping)?;
            }
        }
        if hyper.max_seconds.is_some_and(|m| st.clock >= m) {
            break;
        }
    }

    let final_model = st.averaged(&rec.weights)?;
    Ok(RunTrace {
        algorithm: algorithm.to_string(),
        seed,
        rows: rec.rows,
        global_models,
        final_model,
        membership,
        grouping: grouping_outcome,
        virtual_rows,
        status,
    })
}

fn virtual_row(
    vt: &VirtualTrace,
    st: &FedState,
    partition: &Partition,
    membership: &Membership,
    weights: &[f64],
    sizes: &[f64],
    topo: &Topology,
) -> Result<VirtualRow> {
    let wbar = st.averaged(weights)?;
    let mut group_gap: f64 = 0.0;
    for (k, members) in membership.groups().iter().enumerate() {
        let wk = aggregate(&st.locals, sizes, members, topo, false)?;
        group_gap = group_gap.max(wk.distance(&vt.v_group[k]));
    }
    let (mut delta, mut big_delta) = (0.0f64, 0.0f64);
    for point in [&wbar, &vt.v_global].into_iter().chain(&st.locals) {
        let d = measure_divergences(point, partition, membership)?;
        delta = delta.max(d.delta);
        big_delta = big_delta.max(d.big_delta);
    }
    Ok(VirtualRow { step: st.t, interval: vt.l, gap: wbar.distance(&vt.v_global), group_gap, delta, big_delta, eta: st.eta })
}
