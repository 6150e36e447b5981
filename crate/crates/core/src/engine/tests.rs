use super::*;
use crate::data::{synth_blobs, Dataset};
use crate::grouping::edge_grouping;
use crate::models::{self, Example};
use crate::network::{build_fat_tree, Speeds};
use crate::rng::{self, purpose};

/// `sizes[i]` consecutive blob examples per node, nodes on edges `edges[i]`.
fn fixture(sizes: &[usize], edges: &[usize], seed: u64) -> (Partition, Topology, ModelSpec) {
    let total: usize = sizes.iter().sum();
    let ds = synth_blobs(3, 4, total.div_ceil(3), seed).unwrap();
    // interleave classes so that every node sees a mix
    let order: Vec<usize> = (0..ds.len()).map(|j| (j % 3) * (ds.len() / 3) + j / 3).collect();
    let mut start = 0;
    let assignment = sizes
        .iter()
        .zip(edges)
        .map(|(&s, &e)| {
            let idx = order[start..start + s].to_vec();
            start += s;
            (e, idx)
        })
        .collect();
    let p = Partition::from_indices(ds, assignment).unwrap();
    let topo = build_fat_tree(4, &p.edge_of(), Speeds::default(), seed).unwrap();
    (p, topo, ModelSpec::softmax(4, 3))
}

fn dgd(eta: f64) -> Hyper {
    Hyper { eta, decay: 1.0, mode: GradientMode::Deterministic, ..Hyper::default() }
}

fn init(spec: ModelSpec, seed: u64) -> ModelParams {
    spec.init_params(&mut rng::stream(seed, purpose::INIT, 0))
}

fn oracle_average(models: &[ModelParams], sizes: &[usize]) -> ModelParams {
    let total: usize = sizes.iter().sum();
    let mut acc = vec![0.0; models[0].len()];
    for (m, &s) in models.iter().zip(sizes) {
        for (a, v) in acc.iter_mut().zip(m.values()) {
            *a += s as f64 / total as f64 * v;
        }
    }
    ModelParams::from_values(models[0].spec(), acc).unwrap()
}

#[test]
fn fedavg_matches_hand_stepped_oracle() {
    let sizes = [5, 8, 11];
    let (p, topo, spec) = fixture(&sizes, &[0, 0, 1], 1);
    let trace = run_fedavg(&p, &topo, spec, Schedule::fedavg(2, 4), &dgd(0.3), 9).unwrap();

    let mut locals = vec![init(spec, 9); 3];
    let mut globals = Vec::new();
    for t in 1..=4 {
        for (i, w) in locals.iter_mut().enumerate() {
            let g = models::gradient(w, &p.nodes[i].examples).unwrap();
            *w = w.axpy(-0.3, &g);
        }
        if t % 2 == 0 {
            let w = oracle_average(&locals, &sizes);
            locals.iter_mut().for_each(|l| *l = w.clone());
            globals.push(w);
        }
    }
    assert_eq!(trace.global_models.len(), 2);
    for ((step, got), want) in trace.global_models.iter().zip(&globals) {
        assert!(got.max_abs_diff(want) < 1e-12, "step {step}");
    }
    assert!(trace.final_model.max_abs_diff(&globals[1]) < 1e-12);
    let events: Vec<Event> = trace.rows.iter().map(|r| r.event).collect();
    assert_eq!(events, vec![Event::Start, Event::Global, Event::Global]);
}

#[test]
fn zero_learning_rate_keeps_the_model() {
    let (p, topo, spec) = fixture(&[6, 6, 6, 6], &[0, 1, 0, 1], 2);
    let hyper = Hyper { eta: 0.0, ..Hyper::default() };
    let trace = run_fedavg(&p, &topo, spec, Schedule::fedavg(3, 12), &hyper, 4).unwrap();
    let w0 = init(spec, 4);
    for (_, w) in &trace.global_models {
        assert!(w.max_abs_diff(&w0) < 1e-15);
    }
}

#[test]
fn one_node_is_centralized_gd_bit_for_bit() {
    let (p, topo, spec) = fixture(&[30], &[0], 3);
    let trace = run_fedavg(&p, &topo, spec, Schedule::fedavg(1, 50), &dgd(0.2), 5).unwrap();
    let mut w = init(spec, 5);
    for (step, got) in &trace.global_models {
        w = models::sgd_step(&w, &p.nodes[0].examples, 0.2).unwrap();
        assert_eq!(got.values(), w.values(), "step {step}");
    }
    assert_eq!(trace.global_models.len(), 50);
}

#[test]
fn one_group_collapses_to_fedavg() {
    let (p, topo, spec) = fixture(&[7, 9, 4, 10], &[0, 1, 1, 0], 4);
    let hyper = Hyper { decay: 1.0, ..Hyper::default() };
    let fedavg = run_fedavg(&p, &topo, spec, Schedule::fedavg(2, 24), &hyper, 8).unwrap();
    let group = run_group_fl(&p, &topo, spec, &Membership::single(4), Schedule::group(2, 3, 24), &hyper, false, 8).unwrap();
    assert_eq!(group.global_models.len(), 4);
    for (step, w) in &group.global_models {
        let (_, f) = fedavg.global_models.iter().find(|(s, _)| s == step).unwrap();
        assert!(w.max_abs_diff(f) < 1e-12, "step {step}");
    }
}

#[test]
fn tau2_of_one_makes_every_round_global() {
    let (p, topo, spec) = fixture(&[5, 5, 5, 5], &[0, 0, 1, 1], 5);
    let m = edge_grouping(&p);
    let trace = run_group_fl(&p, &topo, spec, &m, Schedule::group(3, 1, 12), &Hyper::default(), false, 1).unwrap();
    assert!(trace.rows.iter().skip(1).all(|r| r.event == Event::Global));
    assert_eq!(trace.global_models.len(), 4);
}

#[test]
fn group_rounds_between_global_rounds() {
    let (p, topo, spec) = fixture(&[5, 5, 5, 5], &[0, 0, 1, 1], 5);
    let m = edge_grouping(&p);
    let trace = run_group_fl(&p, &topo, spec, &m, Schedule::group(2, 3, 12), &Hyper::default(), false, 1).unwrap();
    let events: Vec<(usize, Event)> = trace.rows.iter().map(|r| (r.step, r.event)).collect();
    use Event::*;
    assert_eq!(events, vec![(0, Start), (2, Group), (4, Group), (6, Global), (8, Group), (10, Group), (12, Global)]);
}

#[test]
fn combined_aggregation_changes_time_not_models() {
    let (p, topo, spec) = fixture(&[6, 8, 5, 7, 9, 4], &[0, 0, 0, 1, 1, 1], 6);
    let m = Membership::new(vec![0, 0, 1, 1, 0, 1], vec![0, 3]).unwrap();
    let hyper = Hyper::default();
    let plain = run_group_fl(&p, &topo, spec, &m, Schedule::group(1, 2, 20), &hyper, false, 2).unwrap();
    let comb = run_group_fl(&p, &topo, spec, &m, Schedule::group(1, 2, 20), &hyper, true, 2).unwrap();
    assert_eq!(plain.global_models.len(), comb.global_models.len());
    for ((s, a), (_, b)) in plain.global_models.iter().zip(&comb.global_models) {
        assert!(a.max_abs_diff(b) < 1e-9, "step {s}");
    }
    assert!(comb.last().comm_seconds < plain.last().comm_seconds);
    assert_eq!(comb.last().compute_seconds, plain.last().compute_seconds);
}

#[test]
fn clock_is_compute_plus_aggregation_delay() {
    let (p, topo, spec) = fixture(&[6, 8, 5, 7], &[0, 1, 0, 1], 7);
    let hyper = Hyper { batch_size: 4, ..Hyper::default() };
    let trace = run_fedavg(&p, &topo, spec, Schedule::fedavg(5, 20), &hyper, 3).unwrap();
    let dm = DelayModel::for_params(spec.param_count());
    let step = crate::network::compute_delay(&topo, &dm, 1, 4);
    let round = global_round_delay(&topo, &dm, 4, 0, false).unwrap();
    let last = trace.last();
    assert!((last.compute_seconds - 20.0 * step).abs() < 1e-12);
    assert!((last.comm_seconds - 4.0 * round).abs() < 1e-12);
    assert!((last.sim_seconds - (20.0 * step + 4.0 * round)).abs() < 1e-12);
    // four nodes, four examples each per step, 26 examples in total
    assert!((last.epoch - 20.0 * 16.0 / 26.0).abs() < 1e-12);
}

#[test]
fn global_delay_ignores_grouping_and_group_delay_is_the_slowest_group() {
    let (p, topo, spec) = fixture(&[4, 4, 4, 4, 4, 4], &[0, 1, 2, 0, 1, 2], 8);
    let dm = DelayModel::for_params(spec.param_count());
    let a = Membership::new(vec![0, 0, 0, 1, 1, 1], vec![0, 3]).unwrap();
    let expected = [0usize, 3]
        .iter()
        .map(|&k| agg_delay(&topo, &dm, &a.members(a.assign[k]), k, false).unwrap())
        .fold(0.0, f64::max);
    assert_eq!(group_round_delay(&topo, &dm, &a, false).unwrap(), expected);
    let g = global_round_delay(&topo, &dm, p.num_nodes(), 0, false).unwrap();
    assert_eq!(g, agg_delay(&topo, &dm, &[0, 1, 2, 3, 4, 5], 0, false).unwrap());
}

#[test]
fn overflowing_models_are_reported_as_divergence() {
    let ex = |x: f64, y| Example::new(vec![x, -x, 0.5 * x, 1.0], y);
    let ds = Dataset::new("big", 3, vec![ex(1e10, 0), ex(-1e10, 1), ex(2e10, 2), ex(-3e10, 0)]).unwrap();
    let p = Partition::from_indices(ds, vec![(0, vec![0, 1]), (1, vec![2, 3])]).unwrap();
    let topo = build_fat_tree(4, &p.edge_of(), Speeds::default(), 0).unwrap();
    let trace = run_fedavg(&p, &topo, ModelSpec::softmax(4, 3), Schedule::fedavg(1, 10), &dgd(1e300), 1).unwrap();
    assert!(matches!(trace.status, RunStatus::Diverged { .. }), "{:?}", trace.status);
    assert_eq!(trace.last().event, Event::Diverged);
    assert!(trace.rows.len() < 11);
}

#[test]
fn same_seed_same_csv() {
    let (p, topo, spec) = fixture(&[6, 8, 5, 7], &[0, 1, 0, 1], 10);
    let run = || run_fedavg_ic(&p, &topo, spec, Schedule::fedavg_ic(1, 3, 13), &CostWeights::default(), 2, &Hyper::default(), 6).unwrap();
    let a = run().to_csv_string().unwrap();
    assert_eq!(a, run().to_csv_string().unwrap());
    let header = a.lines().next().unwrap();
    assert!(header.starts_with("step,sim_seconds,epoch,train_loss,test_accuracy,delta,Delta,cost_iid,cost_comm,algorithm,seed"));
}

#[test]
fn csv_round_trip() {
    let (p, topo, spec) = fixture(&[6, 8], &[0, 1], 10);
    let trace = run_fedavg(&p, &topo, spec, Schedule::fedavg(2, 6), &Hyper::default(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    trace.save_csv(&path).unwrap();
    let back = read_csv(&path).unwrap();
    assert_eq!(back.len(), trace.rows.len());
    for (a, b) in back.iter().zip(&trace.rows) {
        assert_eq!(a.step, b.step);
        assert_eq!(a.train_loss, b.train_loss);
        assert_eq!(a.event, b.event);
    }
}

#[test]
fn fedavg_ic_groups_once_after_the_first_global_round() {
    let (p, topo, spec) = fixture(&[6, 8, 5, 7, 9, 4], &[0, 1, 2, 0, 1, 2], 11);
    let trace = run_fedavg_ic(&p, &topo, spec, Schedule::fedavg_ic(1, 5, 16), &CostWeights::default(), 3, &Hyper::default(), 2).unwrap();
    let globals: Vec<usize> = trace.global_models.iter().map(|(s, _)| *s).collect();
    assert_eq!(globals, vec![1, 6, 11, 16]);
    let groupings = trace.rows.iter().filter(|r| r.event == Event::Grouping).count();
    assert_eq!(groupings, 1);
    assert_eq!(trace.membership.num_groups(), 3);
    assert_eq!(trace.grouping.as_ref().unwrap().membership, trace.membership);
}

#[test]
fn fedavg_ic_with_one_group_matches_single_group_fl() {
    let (p, topo, spec) = fixture(&[6, 8, 5, 7], &[0, 1, 0, 1], 12);
    let hyper = Hyper { decay: 1.0, ic_combined: false, ..Hyper::default() };
    let ic = run_fedavg_ic(&p, &topo, spec, Schedule::fedavg_ic(1, 5, 16), &CostWeights::default(), 1, &hyper, 3).unwrap();
    let gfl = run_group_fl(&p, &topo, spec, &Membership::single(4), Schedule::group(1, 5, 16), &hyper, false, 3).unwrap();
    assert!(ic.membership.assign.iter().all(|&k| k == 0));
    assert!(ic.final_model.max_abs_diff(&gfl.final_model) < 1e-12);
}

#[test]
fn communication_only_grouping_recovers_the_edges() {
    // three nodes on each of two edge switches in different pods
    let sizes = [5, 5, 5, 5, 5, 5];
    let (p, _, spec) = fixture(&sizes, &[0, 0, 0, 1, 1, 1], 13);
    let topo = Topology::from_switch_graph(vec![vec![1], vec![0, 2], vec![1, 3], vec![2]], p.edge_of().iter().map(|&e| 3 * e).collect(), Speeds::default()).unwrap();
    let weights = CostWeights::new(0.0, 1.0).unwrap();
    let hyper = Hyper { snapshot_cap: usize::MAX, ..Hyper::default() };
    for seed in 0..5 {
        let trace = run_fedavg_ic(&p, &topo, spec, Schedule::fedavg_ic(1, 2, 4), &weights, 2, &hyper, seed).unwrap();
        let m = &trace.membership;
        let edges = edge_grouping(&p);
        let same = (0..6).all(|i| (0..6).all(|j| (m.assign[i] == m.assign[j]) == (edges.assign[i] == edges.assign[j])));
        assert!(same, "seed {seed}: {:?}", m.assign);
    }
}

#[test]
fn divergences_vanish_on_identical_data() {
    let ds = synth_blobs(3, 4, 4, 0).unwrap();
    let idx: Vec<usize> = (0..ds.len()).collect();
    let p = Partition::from_indices(ds, vec![(0, idx.clone()), (0, idx.clone()), (1, idx)]).unwrap();
    let w = init(ModelSpec::softmax(4, 3), 1);
    let d = measure_divergences(&w, &p, &Membership::new(vec![0, 1, 1], vec![0, 1]).unwrap()).unwrap();
    assert!(d.delta < 1e-12 && d.big_delta < 1e-12);
}

#[test]
fn one_group_has_no_group_divergence() {
    let (p, _, spec) = fixture(&[6, 8, 5], &[0, 1, 0], 14);
    let d = measure_divergences(&init(spec, 2), &p, &Membership::single(3)).unwrap();
    assert!(d.big_delta < 1e-15);
    assert!(d.delta > 0.0);
}

#[test]
fn divergences_match_recomputation() {
    let (p, _, spec) = fixture(&[6, 8, 5, 7], &[0, 1, 0, 1], 15);
    let w = init(spec, 3);
    let m = Membership::new(vec![0, 1, 1, 0], vec![0, 1]).unwrap();
    let d = measure_divergences(&w, &p, &m).unwrap();

    let grads: Vec<ModelParams> = p.nodes.iter().map(|n| models::gradient(&w, &n.examples).unwrap()).collect();
    let sizes = [6.0, 8.0, 5.0, 7.0];
    let pooled = |nodes: &[usize]| {
        let all: Vec<Example> = nodes.iter().flat_map(|&i| p.nodes[i].examples.clone()).collect();
        models::gradient(&w, &all).unwrap()
    };
    let global = pooled(&[0, 1, 2, 3]);
    let g0 = pooled(&[0, 3]);
    let g1 = pooled(&[1, 2]);
    let delta = (sizes[0] * grads[0].distance(&g0) + sizes[3] * grads[3].distance(&g0) + sizes[1] * grads[1].distance(&g1) + sizes[2] * grads[2].distance(&g1)) / 26.0;
    let big = (13.0 * g0.distance(&global) + 13.0 * g1.distance(&global)) / 26.0;
    assert!((d.delta - delta).abs() < 1e-12, "{} vs {delta}", d.delta);
    assert!((d.big_delta - big).abs() < 1e-12, "{} vs {big}", d.big_delta);
}

#[test]
fn virtual_model_is_the_node_model_for_one_node() {
    let (p, topo, spec) = fixture(&[12], &[0], 16);
    let hyper = Hyper { track_virtual: true, ..dgd(0.3) };
    let trace = run_group_fl(&p, &topo, spec, &Membership::single(1), Schedule::group(2, 3, 12), &hyper, false, 1).unwrap();
    assert_eq!(trace.virtual_rows.len(), 12);
    for r in &trace.virtual_rows {
        assert_eq!(r.gap, 0.0, "step {}", r.step);
        assert_eq!(r.group_gap, 0.0, "step {}", r.step);
    }
}

#[test]
fn virtual_global_model_follows_centralized_gd_from_each_sync() {
    let sizes = [6, 8, 5];
    let (p, topo, spec) = fixture(&sizes, &[0, 1, 0], 17);
    let hyper = Hyper { track_virtual: true, ..dgd(0.25) };
    let m = Membership::new(vec![0, 1, 0], vec![0, 1]).unwrap();
    let trace = run_group_fl(&p, &topo, spec, &m, Schedule::group(2, 2, 8), &hyper, false, 4).unwrap();
    let pooled: Vec<Example> = p.nodes.iter().flat_map(|n| n.examples.clone()).collect();

    // interval 1 starts from the initial model, interval 2 from the first global model
    let starts = [init(spec, 4), trace.global_models[0].1.clone()];
    for (l, start) in starts.iter().enumerate() {
        let mut v = start.clone();
        for _ in 0..4 {
            v = models::sgd_step(&v, &pooled, 0.25).unwrap();
        }
        let (step, w) = &trace.global_models[l];
        let row = trace.virtual_rows.iter().find(|r| r.step == *step).unwrap();
        assert_eq!(row.interval, l + 1);
        assert!((row.gap - w.distance(&v)).abs() < 1e-12, "interval {}: {} vs {}", l + 1, row.gap, w.distance(&v));
    }
}

#[test]
fn virtual_step_matches_pooled_gradient_descent() {
    let (p, _, spec) = fixture(&[6, 8, 5, 7], &[0, 1, 0, 1], 18);
    let m = Membership::new(vec![0, 1, 1, 0], vec![0, 1]).unwrap();
    let w = init(spec, 5);
    let mut vt = VirtualTrace::new(&w, 2);
    let pooled = |nodes: &[usize]| -> Vec<Example> { nodes.iter().flat_map(|&i| p.nodes[i].examples.clone()).collect() };
    let (all, g0, g1) = (pooled(&[0, 1, 2, 3]), pooled(&[0, 3]), pooled(&[1, 2]));
    let (mut v, mut v0, mut v1) = (w.clone(), w.clone(), w.clone());
    for _ in 0..3 {
        virtual_step(&mut vt, &p, &m, 0.4).unwrap();
        v = models::sgd_step(&v, &all, 0.4).unwrap();
        v0 = models::sgd_step(&v0, &g0, 0.4).unwrap();
        v1 = models::sgd_step(&v1, &g1, 0.4).unwrap();
    }
    assert!(vt.v_global.max_abs_diff(&v) < 1e-12);
    assert!(vt.v_group[0].max_abs_diff(&v0) < 1e-12);
    assert!(vt.v_group[1].max_abs_diff(&v1) < 1e-12);
    vt.sync_global(&w);
    assert_eq!((vt.l, vt.r), (2, 2));
    assert_eq!(vt.v_global, w);
}

#[test]
fn learning_rate_decays_per_global_round() {
    let (p, topo, spec) = fixture(&[12], &[0], 19);
    let hyper = Hyper { track_virtual: true, decay: 0.5, ..dgd(0.2) };
    let trace = run_fedavg(&p, &topo, spec, Schedule::fedavg(2, 6), &hyper, 1).unwrap();
    let etas: Vec<f64> = trace.virtual_rows.iter().map(|r| r.eta).collect();
    assert_eq!(etas, vec![0.2, 0.2, 0.1, 0.1, 0.05, 0.05]);
}

#[test]
fn invalid_inputs_are_rejected() {
    let (p, topo, spec) = fixture(&[6, 8], &[0, 1], 20);
    let h = Hyper::default();
    assert!(run_fedavg(&p, &topo, spec, Schedule::fedavg(0, 5), &h, 0).is_err());
    assert!(run_fedavg(&p, &topo, spec, Schedule::fedavg(6, 5), &h, 0).is_err());
    assert!(run_fedavg(&p, &topo, spec, Schedule::group(1, 2, 5), &h, 0).is_err());
    assert!(run_fedavg(&p, &topo, spec, Schedule::fedavg(1, 5), &Hyper { decay: 0.0, ..h.clone() }, 0).is_err());
    assert!(run_fedavg(&p, &topo, spec, Schedule::fedavg(1, 5), &Hyper { server: 2, ..h.clone() }, 0).is_err());
    assert!(run_group_fl(&p, &topo, spec, &Membership::single(3), Schedule::group(1, 1, 5), &h, false, 0).is_err());
    assert!(run_fedavg_ic(&p, &topo, spec, Schedule::fedavg_ic(1, 1, 5), &CostWeights::default(), 3, &h, 0).is_err());
    let wrong = ModelSpec::softmax(5, 3);
    assert!(run_fedavg(&p, &topo, wrong, Schedule::fedavg(1, 5), &h, 0).is_err());
}

#[test]
fn hierfavg_uses_edge_groups() {
    let (p, topo, spec) = fixture(&[6, 8, 5, 7], &[0, 1, 0, 1], 21);
    let trace = run_hierfavg(&p, &topo, spec, Schedule::group(1, 5, 10), &Hyper::default(), 0).unwrap();
    assert_eq!(trace.membership, edge_grouping(&p));
    assert!(trace.rows.iter().all(|r| r.algorithm == "hierfavg"));
}

#[test]
fn test_accuracy_is_nan_without_a_test_set() {
    let (p, topo, spec) = fixture(&[6, 8], &[0, 1], 22);
    let trace = run_fedavg(&p, &topo, spec, Schedule::fedavg(1, 2), &Hyper::default(), 0).unwrap();
    assert!(trace.rows.iter().all(|r| r.test_accuracy.is_nan()));
    let ds = Dataset::new("t", 3, vec![Example::new(vec![0.0; 4], 1)]).unwrap();
    let q = p.clone().with_holdout(ds.clone(), ds);
    let trace = run_fedavg(&q, &topo, spec, Schedule::fedavg(1, 2), &Hyper::default(), 0).unwrap();
    assert!(trace.rows.iter().all(|r| r.test_accuracy == 0.0 || r.test_accuracy == 1.0));
}

#[test]
fn time_budget_stops_at_the_first_aggregation_past_it() {
    let (p, topo, spec) = fixture(&[6, 8, 5, 7], &[0, 1, 0, 1], 23);
    let full = run_fedavg(&p, &topo, spec, Schedule::fedavg(2, 40), &Hyper::default(), 0).unwrap();
    let budget = full.rows[5].sim_seconds;
    let hyper = Hyper { max_seconds: Some(budget), ..Hyper::default() };
    let cut = run_fedavg(&p, &topo, spec, Schedule::fedavg(2, 40), &hyper, 0).unwrap();
    assert_eq!(cut.rows.len(), 6);
    assert!(cut.final_model.max_abs_diff(&full.global_models[4].1) < 1e-12);
    assert!(cut.rows.iter().zip(&full.rows).all(|(a, b)| a.step == b.step && a.sim_seconds == b.sim_seconds && a.train_loss == b.train_loss));
}
