use rand::seq::{IndexedRandom, SliceRandom};

use super::{Speeds, Topology};
use crate::error::{Error, Result};
use crate::rng::{self, purpose};

fn num_edges(placement: &[usize]) -> Result<usize> {
    if placement.is_empty() {
        return Err(Error::config("placement", "needs at least one node"));
    }
    Ok(placement.iter().max().map_or(0, |m| m + 1))
}

/// Three-tier k-ary fat tree. Switches are numbered core first, then pod by
/// pod (aggregation then edge). Logical edge `e` of `placement` is mapped to
/// a seeded choice among the `k^2/2` edge switches.
pub fn build_fat_tree(k: usize, placement: &[usize], speeds: Speeds, seed: u64) -> Result<Topology> {
    if k < 2 || !k.is_multiple_of(2) {
        return Err(Error::config("fat_tree_k", format!("k must be even and >= 2, got {k}")));
    }
    let half = k / 2;
    let cores = half * half;
    let total = cores + k * k;
    let mut adj = vec![Vec::new(); total];
    let mut link = |a: usize, b: usize| {
        adj[a].push(b);
        adj[b].push(a);
    };
    let mut edge_switches = Vec::with_capacity(k * half);
    for pod in 0..k {
        let base = cores + pod * k;
        for a in 0..half {
            for c in 0..half {
                link(base + a, a * half + c);
            }
            for e in 0..half {
                link(base + a, base + half + e);
            }
        }
        edge_switches.extend((0..half).map(|e| base + half + e));
    }

    let edges = num_edges(placement)?;
    if edges > edge_switches.len() {
        return Err(Error::config(
            "fat_tree_k",
            format!("{edges} edges exceed the {} edge switches of a k={k} fat tree", edge_switches.len()),
        ));
    }
    let mut rng = rng::stream(seed, purpose::TOPOLOGY, 0);
    edge_switches.shuffle(&mut rng);
    let hosts = placement.iter().map(|&e| edge_switches[e]).collect();
    Topology::from_switch_graph(adj, hosts, speeds)
}

/// Random regular graph by the incremental jellyfish construction: join
/// random pairs of switches with free ports; when stuck, splice a switch with
/// two free ports into an existing link.
fn jellyfish_graph<R: rand::Rng>(n: usize, degree: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    loop {
        let open: Vec<usize> = (0..n).filter(|&s| adj[s].len() < degree).collect();
        let pairs: Vec<(usize, usize)> = open
            .iter()
            .enumerate()
            .flat_map(|(i, &a)| open[i + 1..].iter().map(move |&b| (a, b)))
            .filter(|&(a, b)| !adj[a].contains(&b))
            .collect();
        if let Some(&(a, b)) = pairs.choose(rng) {
            adj[a].push(b);
            adj[b].push(a);
            continue;
        }
        let Some(&s) = open.iter().find(|&&s| degree - adj[s].len() >= 2) else {
            break;
        };
        let links: Vec<(usize, usize)> = (0..n)
            .flat_map(|x| adj[x].iter().map(move |&y| (x, y)))
            .filter(|&(x, y)| x < y && x != s && y != s && !adj[s].contains(&x) && !adj[s].contains(&y))
            .collect();
        let Some(&(x, y)) = links.choose(rng) else {
            break;
        };
        adj[x].retain(|&v| v != y);
        adj[y].retain(|&v| v != x);
        for v in [x, y] {
            adj[s].push(v);
            adj[v].push(s);
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
    }
    adj
}

fn connected(adj: &[Vec<usize>]) -> bool {
    super::bfs(adj, 0).iter().all(Option::is_some)
}

/// Jellyfish topology over `num_switches` switches with `degree` inter-switch
/// ports each. Logical edges map to a seeded choice of switches.
pub fn build_jellyfish(num_switches: usize, degree: usize, placement: &[usize], speeds: Speeds, seed: u64) -> Result<Topology> {
    if degree == 0 || degree >= num_switches {
        return Err(Error::config("jellyfish_degree", format!("need 0 < degree < {num_switches}")));
    }
    let edges = num_edges(placement)?;
    if edges > num_switches {
        return Err(Error::config("jellyfish_switches", format!("{edges} edges exceed {num_switches} switches")));
    }
    for attempt in 0..100u64 {
        let mut rng = rng::stream(seed, purpose::TOPOLOGY, attempt + 1);
        let adj = jellyfish_graph(num_switches, degree, &mut rng);
        if !connected(&adj) {
            continue;
        }
        let mut order: Vec<usize> = (0..num_switches).collect();
        order.shuffle(&mut rng);
        let hosts = placement.iter().map(|&e| order[e]).collect();
        return Topology::from_switch_graph(adj, hosts, speeds);
    }
    Err(Error::config("jellyfish", "no connected graph after 100 attempts"))
}

/// A cycle of `num_switches` switches.
pub fn ring(num_switches: usize, placement: &[usize], speeds: Speeds) -> Result<Topology> {
    let adj = (0..num_switches)
        .map(|s| {
            let mut v = vec![(s + 1) % num_switches, (s + num_switches - 1) % num_switches];
            v.sort_unstable();
            v.dedup();
            v.retain(|&t| t != s);
            v
        })
        .collect();
    Topology::from_switch_graph(adj, placement.to_vec(), speeds)
}
