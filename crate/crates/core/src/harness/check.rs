use serde::Serialize;

use crate::analysis::{theorem1_terms, Constants, EstimationMethod};
use crate::data::{synth_blobs, Partition};
use crate::engine::{self, GradientMode, Hyper, Schedule};
use crate::error::Result;
use crate::grouping::{self, CostWeights, Membership};
use crate::models::{self, ModelSpec};
use crate::network::{build_fat_tree, round_robin, Speeds, Topology};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn fixture(nodes: usize, edges: usize, seed: u64) -> Result<(Partition, Topology, ModelSpec)> {
    let ds = synth_blobs(4, 5, 6 * nodes, seed)?;
    let per = ds.len() / nodes;
    let assignment = (0..nodes).map(|i| (i % edges, (i * per..(i + 1) * per).collect())).collect();
    let p = Partition::from_indices(ds, assignment)?;
    let topo = build_fat_tree(4, &round_robin(nodes, edges), Speeds::default(), seed)?;
    Ok((p, topo, ModelSpec::softmax(5, 4)))
}

fn collapse() -> Result<CheckOutcome> {
    let (p, topo, spec) = fixture(6, 3, 1)?;
    let hyper = Hyper { decay: 1.0, ..Hyper::default() };
    let a = engine::run_fedavg(&p, &topo, spec, Schedule::fedavg(2, 12), &hyper, 0)?;
    let b = engine::run_group_fl(&p, &topo, spec, &Membership::single(6), Schedule::group(2, 2, 12), &hyper, false, 0)?;
    let worst = b
        .global_models
        .iter()
        .filter_map(|(s, w)| a.global_models.iter().find(|(t, _)| t == s).map(|(_, v)| w.max_abs_diff(v)))
        .fold(0.0, f64::max);
    Ok(CheckOutcome { name: "single-group collapse", passed: worst < 1e-12, detail: format!("max |diff| {worst:.3e}") })
}

fn combined() -> Result<CheckOutcome> {
    let (p, topo, spec) = fixture(6, 2, 2)?;
    let m = grouping::edge_grouping(&p);
    let h = Hyper::default();
    let plain = engine::run_group_fl(&p, &topo, spec, &m, Schedule::group(1, 3, 15), &h, false, 0)?;
    let comb = engine::run_group_fl(&p, &topo, spec, &m, Schedule::group(1, 3, 15), &h, true, 0)?;
    let worst = plain.global_models.iter().zip(&comb.global_models).map(|((_, a), (_, b))| a.max_abs_diff(b)).fold(0.0, f64::max);
    let faster = comb.last().comm_seconds < plain.last().comm_seconds;
    Ok(CheckOutcome {
        name: "combined aggregation",
        passed: worst < 1e-9 && faster,
        detail: format!("max |diff| {worst:.3e}, comm {:.4}s vs {:.4}s", comb.last().comm_seconds, plain.last().comm_seconds),
    })
}

fn kmedoids() -> Result<CheckOutcome> {
    let (p, topo, spec) = fixture(8, 4, 3)?;
    let w = spec.init_params(&mut crate::rng::stream(0, crate::rng::purpose::INIT, 0));
    let snap = grouping::snapshot(&w, &p, usize::MAX, 0)?;
    let mut bad = 0;
    for seed in 0..10 {
        let out = grouping::node_grouping(&snap, &topo, 3, &mut CostWeights::default(), seed, 3)?;
        bad += out.cost_trace.windows(2).filter(|c| c[1] > c[0] + 1e-9).count();
    }
    Ok(CheckOutcome { name: "k-medoids monotone cost", passed: bad == 0, detail: format!("{bad} increases") })
}

fn sync_law() -> Result<CheckOutcome> {
    let (p, topo, spec) = fixture(4, 2, 4)?;
    let hyper = Hyper { mode: GradientMode::Deterministic, ..Hyper::default() };
    let trace = engine::run_fedavg(&p, &topo, spec, Schedule::fedavg(3, 9), &hyper, 0)?;
    let (_, last) = trace.global_models.last().expect("three global rounds");
    let diff = trace.final_model.max_abs_diff(last);
    let loss = models::loss(last, &p.train.examples)?;
    Ok(CheckOutcome { name: "global sync", passed: diff < 1e-12 && loss.is_finite(), detail: format!("final vs global {diff:.3e}") })
}

fn bound_terms() -> Result<CheckOutcome> {
    let c = Constants { rho_hat: 1.5, beta_hat: 2.0, omega_hat: 0.3, method: EstimationMethod::PairSampling };
    let mut ok = true;
    for (t1, t2) in [(1, 1), (1, 5), (2, 3), (5, 1)] {
        let lo = theorem1_terms(&c, 0.2, 0.3, 0.1, t1, t2)?;
        let more_t1 = theorem1_terms(&c, 0.2, 0.3, 0.1, t1 + 1, t2)?;
        let more_t2 = theorem1_terms(&c, 0.2, 0.3, 0.1, t1, t2 + 1)?;
        let more_d = theorem1_terms(&c, 0.25, 0.35, 0.1, t1, t2)?;
        ok &= more_t1.optimization < lo.optimization && more_t1.divergence > lo.divergence;
        ok &= more_t2.optimization < lo.optimization && more_t2.divergence > lo.divergence;
        ok &= more_d.total() > lo.total();
    }
    Ok(CheckOutcome { name: "bound monotonicity", passed: ok, detail: String::new() })
}

/// Quick invariant suite behind the `check` command.
pub fn run_checks() -> Result<Vec<CheckOutcome>> {
    Ok(vec![collapse()?, combined()?, kmedoids()?, sync_law()?, bound_terms()?])
}
