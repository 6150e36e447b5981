use super::*;

fn assert_metric(t: &Topology) {
    let n = t.num_nodes();
    for i in 0..n {
        assert_eq!(t.hop(i, i), 0);
        for j in 0..n {
            assert_eq!(t.hop(i, j), t.hop(j, i));
            if i != j {
                assert!(t.hop(i, j) >= 2);
            }
            for k in 0..n {
                assert!(t.hop(i, k) <= t.hop(i, j) + t.hop(j, k));
            }
        }
    }
}

/// Switches 0-1-2 in a line; node 0 (server) and node 1 on switch 0, node 2 on switch 2.
fn line() -> Topology {
    Topology::from_switch_graph(vec![vec![1], vec![0, 2], vec![1]], vec![0, 0, 2], Speeds::default()).unwrap()
}

fn one_mb() -> DelayModel {
    DelayModel { param_count: 125_000, model_bytes: 1_000_000, mode: DelayMode::Bottleneck }
}

#[test]
fn same_switch_is_two_hops() {
    let t = line();
    assert_eq!(t.hop(0, 1), 2);
    assert_eq!(t.hop(0, 2), 4);
    assert_metric(&t);
}

#[test]
fn fat_tree_k4_hop_profile() {
    // one host per edge switch: each host has exactly one pod-mate at 4 hops
    // and six hosts in other pods at 6 hops
    let t = build_fat_tree(4, &round_robin(8, 8), Speeds::default(), 0).unwrap();
    assert_metric(&t);
    for i in 0..8 {
        let mut row: Vec<u32> = (0..8).filter(|&j| j != i).map(|j| t.hop(i, j)).collect();
        row.sort_unstable();
        assert_eq!(row, vec![4, 6, 6, 6, 6, 6, 6]);
    }
    let max = t.hop_matrix().iter().flatten().max().copied();
    assert_eq!(max, Some(6));
    assert_eq!(t.switches().len(), 4 + 16);
}

#[test]
fn fat_tree_switch_degrees_are_k() {
    let t = build_fat_tree(6, &round_robin(4, 2), Speeds::default(), 1).unwrap();
    for (s, adj) in t.switches().iter().enumerate() {
        let expected = if s < 9 { 6 } else { 3 + usize::from((s - 9) % 6 < 3) * 3 };
        assert_eq!(adj.len(), expected, "switch {s}");
    }
}

#[test]
fn fat_tree_capacity_and_arity_errors() {
    assert!(matches!(build_fat_tree(3, &[0], Speeds::default(), 0), Err(Error::Config { .. })));
    assert!(matches!(build_fat_tree(4, &round_robin(9, 9), Speeds::default(), 0), Err(Error::Config { .. })));
}

#[test]
fn jellyfish_is_deterministic_connected_and_regular() {
    let place = round_robin(16, 8);
    let a = build_jellyfish(8, 3, &place, Speeds::default(), 5).unwrap();
    let b = build_jellyfish(8, 3, &place, Speeds::default(), 5).unwrap();
    assert_eq!(a.hop_matrix(), b.hop_matrix());
    assert_metric(&a);
    for adj in a.switches() {
        assert!(adj.len() == 3 || adj.len() == 2, "{adj:?}");
    }
    let ports: usize = a.switches().iter().map(Vec::len).sum();
    assert!(ports >= 8 * 3 - 1);
}

#[test]
fn jellyfish_beats_a_ring() {
    let place = round_robin(8, 8);
    let r = ring(8, &place, Speeds::default()).unwrap();
    // ring of 8: switch distances 1,1,2,2,3,3,4 from every switch
    assert!((r.mean_hop() - (2.0 + 16.0 / 7.0)).abs() < 1e-12);
    for seed in 0..5 {
        let j = build_jellyfish(8, 3, &place, Speeds::default(), seed).unwrap();
        assert!(j.mean_hop() < r.mean_hop(), "seed {seed}: {} vs {}", j.mean_hop(), r.mean_hop());
    }
}

#[test]
fn jellyfish_rejects_bad_degree() {
    assert!(build_jellyfish(4, 4, &[0], Speeds::default(), 0).is_err());
    assert!(build_jellyfish(4, 0, &[0], Speeds::default(), 0).is_err());
}

#[test]
fn disconnected_and_asymmetric_graphs_are_rejected() {
    let s = Speeds::default();
    assert!(Topology::from_switch_graph(vec![vec![], vec![]], vec![0, 1], s).is_err());
    assert!(Topology::from_switch_graph(vec![vec![1], vec![]], vec![0, 1], s).is_err());
    assert!(Topology::from_switch_graph(vec![vec![]], vec![3], s).is_err());
}

#[test]
fn single_participant_at_server_costs_nothing() {
    let t = line();
    for mode in [DelayMode::Bottleneck, DelayMode::Serialized] {
        let dm = one_mb().with_mode(mode);
        assert_eq!(agg_delay(&t, &dm, &[0], 0, false).unwrap(), 0.0);
        assert_eq!(agg_delay(&t, &dm, &[0], 0, true).unwrap(), 0.0);
    }
}

#[test]
fn bottleneck_arithmetic() {
    // hops 2 and 4, 1 MB over 10 MB/s, uplink and broadcast
    let d = agg_delay(&line(), &one_mb(), &[1, 2], 0, false).unwrap();
    assert!((d - 0.8).abs() < 1e-12, "{d}");
}

#[test]
fn serialized_arithmetic() {
    let dm = one_mb().with_mode(DelayMode::Serialized);
    let d = agg_delay(&line(), &dm, &[1, 2], 0, false).unwrap();
    assert!((d - 1.2).abs() < 1e-12, "{d}");
}

#[test]
fn unknown_nodes_are_domain_errors() {
    let t = line();
    assert!(matches!(agg_delay(&t, &one_mb(), &[7], 0, false), Err(Error::Domain(_))));
    assert!(matches!(agg_delay(&t, &one_mb(), &[0], 9, false), Err(Error::Domain(_))));
    assert!(matches!(agg_delay(&t, &one_mb(), &[], 0, false), Err(Error::Domain(_))));
}

fn subsets(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (1u32..(1 << n)).map(move |mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
}

#[test]
fn combining_never_costs_more_when_serialized() {
    // 6 nodes on 2 edge switches of a fixed k=4 fat tree
    let t = build_fat_tree(4, &round_robin(6, 2), Speeds::default(), 2).unwrap();
    let dm = DelayModel::for_params(1000);
    let mut strict = 0;
    for server in 0..6 {
        for p in subsets(6) {
            let plain = agg_delay(&t, &dm, &p, server, false).unwrap();
            let comb = agg_delay(&t, &dm, &p, server, true).unwrap();
            assert!(comb <= plain, "server {server} participants {p:?}: {comb} > {plain}");
            strict += usize::from(comb < plain);
        }
    }
    assert!(strict > 0);
    // all six nodes, server 0: the far edge sends one model instead of three
    let all: Vec<usize> = (0..6).collect();
    let h = t.hop(0, 1) as f64;
    let per_hop = 8000.0 / SLOW_LINK;
    let plain = 2.0 * per_hop * (2.0 * 2.0 + 3.0 * h);
    let comb = 2.0 * per_hop * (2.0 * 2.0 + 2.0 * 2.0 + h);
    assert!((agg_delay(&t, &dm, &all, 0, false).unwrap() - plain).abs() < 1e-15);
    assert!((agg_delay(&t, &dm, &all, 0, true).unwrap() - comb).abs() < 1e-15);
}

#[test]
fn combining_under_bottleneck_only_adds_the_intra_edge_phase() {
    // every host on an edge switch is equidistant from the server, so the
    // inter-edge maximum is unchanged
    let t = build_fat_tree(4, &round_robin(6, 2), Speeds::default(), 2).unwrap();
    let dm = DelayModel::for_params(1000).with_mode(DelayMode::Bottleneck);
    let all: Vec<usize> = (0..6).collect();
    let plain = agg_delay(&t, &dm, &all, 0, false).unwrap();
    let comb = agg_delay(&t, &dm, &all, 0, true).unwrap();
    let intra = 2.0 * 8000.0 / SLOW_LINK * 2.0;
    assert!((comb - (plain + intra)).abs() < 1e-15);
}

#[test]
fn adding_a_participant_never_decreases_delay() {
    let t = build_fat_tree(4, &round_robin(8, 4), Speeds::default(), 3).unwrap();
    for mode in [DelayMode::Bottleneck, DelayMode::Serialized] {
        let dm = DelayModel::for_params(50).with_mode(mode);
        for combined in [false, true] {
            for p in subsets(8) {
                let base = agg_delay(&t, &dm, &p, 0, combined).unwrap();
                for extra in (0..8).filter(|x| !p.contains(x)) {
                    let mut q = p.clone();
                    q.push(extra);
                    assert!(agg_delay(&t, &dm, &q, 0, combined).unwrap() >= base);
                }
            }
        }
    }
}

#[test]
fn doubling_link_speed_halves_delay_exactly() {
    let t = build_jellyfish(6, 3, &round_robin(9, 6), Speeds::default(), 4).unwrap();
    let fast = t.with_speeds(Speeds { link: 2.0 * SLOW_LINK, proc: SLOW_PROC }).unwrap();
    for mode in [DelayMode::Bottleneck, DelayMode::Serialized] {
        let dm = DelayModel::for_params(7850).with_mode(mode);
        for combined in [false, true] {
            for p in subsets(9).step_by(7) {
                let slow = agg_delay(&t, &dm, &p, 4, combined).unwrap();
                assert_eq!(agg_delay(&fast, &dm, &p, 4, combined).unwrap(), slow / 2.0);
            }
        }
    }
}

#[test]
fn compute_delay_arithmetic() {
    let t = line();
    assert_eq!(compute_delay(&t, &DelayModel::for_params(0), 10, 128), 0.0);
    let dm = DelayModel::for_params(10_000);
    let slow = compute_delay(&t, &dm, 1, 128);
    assert!((slow - 1.536e-3).abs() < 1e-15, "{slow}");
    let fast = t.with_speeds(Speeds { link: SLOW_LINK, proc: FAST_PROC }).unwrap();
    // a/(50b) and (a/b)/50 may differ in the last bit
    let ratio = compute_delay(&fast, &dm, 1, 128) / (slow / 50.0);
    assert!((ratio - 1.0).abs() <= f64::EPSILON, "{ratio}");
    assert_eq!(compute_delay(&t, &dm, 5, 128), 5.0 * slow);
}

#[test]
fn topology_json_round_trip() {
    let t = build_fat_tree(4, &round_robin(6, 3), Speeds::default(), 9).unwrap();
    let json = serde_json::to_string(&t.to_doc()).unwrap();
    let back = Topology::from_doc(&serde_json::from_str(&json).unwrap()).unwrap();
    assert_eq!(back, t);
}

#[test]
fn fat_tree_placement_depends_on_seed_only() {
    let p = round_robin(10, 5);
    let a = build_fat_tree(8, &p, Speeds::default(), 1).unwrap();
    let b = build_fat_tree(8, &p, Speeds::default(), 1).unwrap();
    assert_eq!(a, b);
    let differs = (2..10).any(|s| build_fat_tree(8, &p, Speeds::default(), s).unwrap().hop_matrix() != a.hop_matrix());
    assert!(differs);
}
