use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::models::Example;
use crate::rng::{self, purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassFraction {
    Tenth,
    Quarter,
    Half,
}

impl ClassFraction {
    pub fn value(self) -> f64 {
        match self {
            ClassFraction::Tenth => 0.1,
            ClassFraction::Quarter => 0.25,
            ClassFraction::Half => 0.5,
        }
    }

    fn letter(self) -> char {
        match self {
            ClassFraction::Tenth => 't',
            ClassFraction::Quarter => 'q',
            ClassFraction::Half => 'h',
        }
    }

    fn count(self, num_classes: usize) -> usize {
        ((self.value() * num_classes as f64).round() as usize).max(1)
    }
}

/// Class diversity of nodes and edges, written `D<node><edge>` with letters
/// `t` (a tenth of the classes), `q` (a quarter) or `h` (half).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiversitySetting {
    pub node_fraction: ClassFraction,
    pub edge_fraction: ClassFraction,
}

impl DiversitySetting {
    pub fn new(node_fraction: ClassFraction, edge_fraction: ClassFraction) -> Result<Self> {
        if node_fraction.value() > edge_fraction.value() {
            return Err(Error::config("setting", "node class fraction exceeds edge fraction"));
        }
        Ok(DiversitySetting { node_fraction, edge_fraction })
    }

    pub fn classes_per_node(&self, num_classes: usize) -> usize {
        self.node_fraction.count(num_classes)
    }

    pub fn classes_per_edge(&self, num_classes: usize) -> usize {
        self.edge_fraction.count(num_classes)
    }
}

impl fmt::Display for DiversitySetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D{}{}", self.node_fraction.letter(), self.edge_fraction.letter())
    }
}

impl FromStr for DiversitySetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let letter = |c: char| match c.to_ascii_lowercase() {
            't' => Ok(ClassFraction::Tenth),
            'q' => Ok(ClassFraction::Quarter),
            'h' => Ok(ClassFraction::Half),
            _ => Err(Error::config("setting", format!("unknown diversity setting `{s}`"))),
        };
        let chars: Vec<char> = s.chars().collect();
        match chars.as_slice() {
            [d, n, e] if d.eq_ignore_ascii_case(&'d') => DiversitySetting::new(letter(*n)?, letter(*e)?),
            _ => Err(Error::config("setting", format!("unknown diversity setting `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Node `i` goes to edge `i mod num_edges`.
    #[default]
    RoundRobin,
    /// A seeded shuffle of the round-robin assignment; edge sizes stay balanced.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeClasses {
    /// Every edge draws its class set independently; classes may be left
    /// without an edge.
    #[default]
    Independent,
    /// Edges take consecutive windows of one shuffled class order, so every
    /// class reaches some edge whenever `num_edges * classes_per_edge` allows.
    Covering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub setting: DiversitySetting,
    pub mean_examples: f64,
    pub sd_examples: f64,
    /// Standard deviation of the per-node class-count jitter.
    pub class_count_sd: f64,
    pub placement: Placement,
    pub edge_classes: EdgeClasses,
}

impl PartitionConfig {
    pub fn new(num_nodes: usize, num_edges: usize, setting: DiversitySetting, mean_examples: f64, sd_examples: f64) -> Self {
        PartitionConfig {
            num_nodes,
            num_edges,
            setting,
            mean_examples,
            sd_examples,
            class_count_sd: 1.0,
            placement: Placement::RoundRobin,
            edge_classes: EdgeClasses::Independent,
        }
    }

    fn validate(&self, num_classes: usize) -> Result<()> {
        if self.num_edges == 0 || self.num_nodes < self.num_edges {
            return Err(Error::config("num_nodes", "need num_nodes >= num_edges >= 1"));
        }
        if !(self.mean_examples.is_finite() && self.mean_examples > 0.0) {
            return Err(Error::config("mean_examples", "must be positive"));
        }
        if !(self.sd_examples.is_finite() && self.sd_examples >= 0.0) {
            return Err(Error::config("sd_examples", "must be nonnegative"));
        }
        if !(self.class_count_sd.is_finite() && self.class_count_sd >= 0.0) {
            return Err(Error::config("class_count_sd", "must be nonnegative"));
        }
        let (cpn, cpe) = (self.setting.classes_per_node(num_classes), self.setting.classes_per_edge(num_classes));
        if cpn > num_classes || cpe > num_classes || cpn > cpe {
            return Err(Error::config("setting", format!("{} is infeasible with {num_classes} classes", self.setting)));
        }
        Ok(())
    }
}

/// One node's local dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeData {
    pub edge: usize,
    /// Indices into the training split.
    pub indices: Vec<usize>,
    pub examples: Vec<Example>,
    /// True if some examples were drawn with replacement.
    pub replacement: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub nodes: Vec<NodeData>,
    pub num_edges: usize,
    pub train: Dataset,
    pub val: Option<Dataset>,
    pub test: Option<Dataset>,
}

impl Partition {
    /// Builds a partition from explicit `(edge, train indices)` pairs.
    pub fn from_indices(train: Dataset, assignment: Vec<(usize, Vec<usize>)>) -> Result<Self> {
        if assignment.is_empty() {
            return Err(Error::Domain("partition needs at least one node".into()));
        }
        let num_edges = assignment.iter().map(|(e, _)| e + 1).max().unwrap_or(0);
        let mut nodes = Vec::with_capacity(assignment.len());
        let mut seen = BTreeSet::new();
        let mut replacement = false;
        for (i, (edge, indices)) in assignment.into_iter().enumerate() {
            if indices.is_empty() {
                return Err(Error::Domain(format!("node {i} has no examples")));
            }
            let mut node_repeats = false;
            for &j in &indices {
                if j >= train.len() {
                    return Err(Error::Domain(format!("node {i} references example {j} beyond the train split")));
                }
                node_repeats |= !seen.insert(j);
            }
            replacement |= node_repeats;
            let examples = indices.iter().map(|&j| train.examples[j].clone()).collect();
            nodes.push(NodeData { edge, indices, examples, replacement: node_repeats });
        }
        if replacement {
            log::debug!("partition built from indices contains repeated examples");
        }
        Ok(Partition { nodes, num_edges, train, val: None, test: None })
    }

    pub fn with_holdout(mut self, val: Dataset, test: Dataset) -> Self {
        self.val = Some(val);
        self.test = Some(test);
        self
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn total_examples(&self) -> usize {
        self.nodes.iter().map(|n| n.examples.len()).sum()
    }

    /// Data weights |D_i| / |D|.
    pub fn weights(&self) -> Vec<f64> {
        let total = self.total_examples() as f64;
        self.nodes.iter().map(|n| n.examples.len() as f64 / total).collect()
    }

    pub fn edge_of(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.edge).collect()
    }

    pub fn node_labels(&self, node: usize) -> BTreeSet<usize> {
        self.nodes[node].examples.iter().map(|e| e.label).collect()
    }

    pub fn edge_labels(&self, edge: usize) -> BTreeSet<usize> {
        self.nodes
            .iter()
            .filter(|n| n.edge == edge)
            .flat_map(|n| n.examples.iter().map(|e| e.label))
            .collect()
    }

    pub fn used_replacement(&self) -> bool {
        self.nodes.iter().any(|n| n.replacement)
    }

    pub fn to_doc(&self) -> PartitionDoc {
        PartitionDoc {
            num_edges: self.num_edges,
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| (i, NodeDoc { edge: n.edge, examples: n.indices.clone(), replacement: n.replacement }))
                .collect(),
            replacement_fallback: self.used_replacement(),
        }
    }

    /// Rebuilds a partition from its JSON document and the training split.
    pub fn from_doc(train: Dataset, doc: &PartitionDoc) -> Result<Self> {
        let expected: Vec<usize> = (0..doc.nodes.len()).collect();
        if doc.nodes.keys().copied().collect::<Vec<_>>() != expected {
            return Err(Error::Domain("partition document node ids must be 0..n".into()));
        }
        let mut p = Partition::from_indices(train, doc.nodes.values().map(|n| (n.edge, n.examples.clone())).collect())?;
        p.num_edges = p.num_edges.max(doc.num_edges);
        for (node, d) in p.nodes.iter_mut().zip(doc.nodes.values()) {
            node.replacement |= d.replacement;
        }
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }
}

/// Serialized form: node id to edge and example indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionDoc {
    pub num_edges: usize,
    pub nodes: BTreeMap<usize, NodeDoc>,
    pub replacement_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub edge: usize,
    pub examples: Vec<usize>,
    #[serde(default)]
    pub replacement: bool,
}

fn jittered<R: Rng>(rng: &mut R, mean: f64, sd: f64, lo: usize, hi: usize) -> usize {
    let draw = if sd > 0.0 {
        Normal::new(mean, sd).expect("finite parameters").sample(rng)
    } else {
        mean
    };
    (draw.round().max(lo as f64) as usize).min(hi)
}

/// Splits `train` across nodes grouped under edges. Edges draw their class
/// sets first; each node draws its classes from its edge's set, then its
/// example count from a normal distribution, then examples without
/// replacement (falling back to replacement once its classes run dry).
pub fn partition(train: &Dataset, cfg: &PartitionConfig, seed: u64) -> Result<Partition> {
    let num_classes = train.num_classes;
    cfg.validate(num_classes)?;
    let cpn = cfg.setting.classes_per_node(num_classes);
    let cpe = cfg.setting.classes_per_edge(num_classes);
    let mut rng = rng::stream(seed, purpose::PARTITION, 0);

    let mut edge_of: Vec<usize> = (0..cfg.num_nodes).map(|i| i % cfg.num_edges).collect();
    if cfg.placement == Placement::Random {
        edge_of.shuffle(&mut rng);
    }

    let by_class = train.indices_by_class();
    let present: Vec<usize> = (0..num_classes).filter(|&c| !by_class[c].is_empty()).collect();
    if present.len() < cpe {
        return Err(Error::config("setting", format!("{} needs {cpe} classes but train has {}", cfg.setting, present.len())));
    }
    let edge_classes: Vec<Vec<usize>> = match cfg.edge_classes {
        EdgeClasses::Independent => (0..cfg.num_edges)
            .map(|_| {
                let mut set: Vec<usize> = present.choose_multiple(&mut rng, cpe).copied().collect();
                set.sort_unstable();
                set
            })
            .collect(),
        EdgeClasses::Covering => {
            let mut order = present.clone();
            order.shuffle(&mut rng);
            (0..cfg.num_edges)
                .map(|e| {
                    let mut set: Vec<usize> = (0..cpe).map(|j| order[(e * cpe + j) % order.len()]).collect();
                    set.sort_unstable();
                    set
                })
                .collect()
        }
    };

    let mut unused: Vec<Vec<usize>> = by_class.clone();
    for pool in unused.iter_mut() {
        pool.shuffle(&mut rng);
    }

    let mut assignment = Vec::with_capacity(cfg.num_nodes);
    let mut flags = Vec::with_capacity(cfg.num_nodes);
    for &edge in &edge_of {
        let k = jittered(&mut rng, cpn as f64, cfg.class_count_sd, 1, cpn);
        let mut classes: Vec<usize> = edge_classes[edge].choose_multiple(&mut rng, k).copied().collect();
        classes.sort_unstable();
        let available: usize = classes.iter().map(|&c| by_class[c].len()).sum();
        let want = jittered(&mut rng, cfg.mean_examples, cfg.sd_examples, 1, available);

        let mut fresh: Vec<usize> = classes.iter().flat_map(|&c| unused[c].iter().copied()).collect();
        fresh.shuffle(&mut rng);
        fresh.truncate(want);
        let taken: BTreeSet<usize> = fresh.iter().copied().collect();
        for &c in &classes {
            unused[c].retain(|j| !taken.contains(j));
        }
        let mut indices = fresh;
        let short = want - indices.len();
        if short > 0 {
            let all: Vec<usize> = classes.iter().flat_map(|&c| by_class[c].iter().copied()).collect();
            indices.extend((0..short).map(|_| *all.choose(&mut rng).expect("classes are non-empty")));
        }
        indices.sort_unstable();
        flags.push(short > 0);
        assignment.push((edge, indices));
    }

    let mut p = Partition::from_indices(train.clone(), assignment)?;
    p.num_edges = cfg.num_edges;
    for (node, flag) in p.nodes.iter_mut().zip(flags) {
        node.replacement = flag;
    }
    if p.used_replacement() {
        log::warn!("partition exhausted some classes and sampled with replacement");
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;

    fn train() -> Dataset {
        synth_blobs(10, 2, 60, 11).unwrap()
    }

    fn check_invariants(p: &Partition, setting: DiversitySetting) {
        let c = p.train.num_classes;
        let mut seen = BTreeSet::new();
        for (i, n) in p.nodes.iter().enumerate() {
            assert!(!n.examples.is_empty(), "node {i} empty");
            assert!(p.node_labels(i).len() <= setting.classes_per_node(c), "node {i} cap");
            if !n.replacement {
                for &j in &n.indices {
                    assert!(seen.insert(j), "example {j} reused by node {i}");
                }
            }
            for (&j, ex) in n.indices.iter().zip(&n.examples) {
                assert_eq!(&p.train.examples[j], ex);
            }
        }
        for e in 0..p.num_edges {
            assert!(p.edge_labels(e).len() <= setting.classes_per_edge(c), "edge {e} cap");
        }
    }

    #[test]
    fn setting_parses_and_prints() {
        let s: DiversitySetting = "Dtq".parse().unwrap();
        assert_eq!(s.to_string(), "Dtq");
        assert_eq!((s.classes_per_node(10), s.classes_per_edge(10)), (1, 3));
        let h: DiversitySetting = "dhh".parse().unwrap();
        assert_eq!((h.classes_per_node(10), h.classes_per_edge(10)), (5, 5));
        assert!("Dht".parse::<DiversitySetting>().is_err());
        assert!("Dxx".parse::<DiversitySetting>().is_err());
    }

    #[test]
    fn class_counts_never_drop_below_one() {
        let s: DiversitySetting = "Dtt".parse().unwrap();
        assert_eq!((s.classes_per_node(3), s.classes_per_edge(3)), (1, 1));
    }

    #[test]
    fn dhh_respects_caps() {
        let s: DiversitySetting = "Dhh".parse().unwrap();
        let p = partition(&train(), &PartitionConfig::new(20, 4, s, 20.0, 5.0), 1).unwrap();
        check_invariants(&p, s);
    }

    #[test]
    fn dtt_without_jitter_gives_one_class_per_node() {
        let s: DiversitySetting = "Dtt".parse().unwrap();
        let mut cfg = PartitionConfig::new(10, 2, s, 10.0, 0.0);
        cfg.class_count_sd = 0.0;
        let p = partition(&train(), &cfg, 4).unwrap();
        for i in 0..p.num_nodes() {
            assert_eq!(p.node_labels(i).len(), 1);
            assert_eq!(p.nodes[i].examples.len(), 10);
        }
    }

    #[test]
    fn small_dtq_partition_scan() {
        let s: DiversitySetting = "Dtq".parse().unwrap();
        let p = partition(&train(), &PartitionConfig::new(6, 2, s, 8.0, 2.0), 3).unwrap();
        assert_eq!(p.edge_of(), vec![0, 1, 0, 1, 0, 1]);
        assert!(!p.used_replacement());
        check_invariants(&p, s);
        assert!(p.total_examples() <= p.train.len());
    }

    #[test]
    fn exhausted_classes_fall_back_to_replacement() {
        let s: DiversitySetting = "Dtt".parse().unwrap();
        let p = partition(&train(), &PartitionConfig::new(8, 1, s, 50.0, 0.0), 0).unwrap();
        assert!(p.used_replacement());
        assert!(p.to_doc().replacement_fallback);
        check_invariants(&p, s);
    }

    #[test]
    fn random_placement_keeps_edges_balanced() {
        let s: DiversitySetting = "Dqh".parse().unwrap();
        let mut cfg = PartitionConfig::new(12, 3, s, 5.0, 1.0);
        cfg.placement = Placement::Random;
        let p = partition(&train(), &cfg, 8).unwrap();
        for e in 0..3 {
            assert_eq!(p.edge_of().iter().filter(|&&x| x == e).count(), 4);
        }
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let s: DiversitySetting = "Dtt".parse().unwrap();
        let err = partition(&train(), &PartitionConfig::new(2, 3, s, 5.0, 1.0), 0).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
        let two = synth_blobs(2, 2, 10, 0).unwrap();
        let h: DiversitySetting = "Dhh".parse().unwrap();
        // half of two classes is one per edge, fine; a quarter of one class is also one
        assert!(partition(&two, &PartitionConfig::new(2, 1, h, 3.0, 0.0), 0).is_ok());
        assert!(partition(&two, &PartitionConfig::new(2, 1, h, -1.0, 0.0), 0).is_err());
    }

    #[test]
    fn serialization_is_deterministic_and_round_trips() {
        let s: DiversitySetting = "Dqh".parse().unwrap();
        let cfg = PartitionConfig::new(7, 2, s, 12.0, 3.0);
        let a = partition(&train(), &cfg, 5).unwrap();
        let b = partition(&train(), &cfg, 5).unwrap();
        let json = a.to_json().unwrap();
        assert_eq!(json, b.to_json().unwrap());
        let doc: PartitionDoc = serde_json::from_str(&json).unwrap();
        let back = Partition::from_doc(train(), &doc).unwrap();
        assert_eq!(back.nodes, a.nodes);
        assert_eq!(back.num_edges, 2);
    }

    #[test]
    fn from_indices_validates() {
        assert!(Partition::from_indices(train(), vec![(0, vec![])]).is_err());
        assert!(Partition::from_indices(train(), vec![(0, vec![100_000])]).is_err());
        let p = Partition::from_indices(train(), vec![(0, vec![0, 1]), (1, vec![2])]).unwrap();
        assert_eq!(p.weights(), vec![2.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn covering_edges_reach_every_class() {
        let ds = train();
        let setting: DiversitySetting = "Dtt".parse().unwrap();
        let independent = PartitionConfig::new(50, 10, setting, 5.0, 0.0);
        let covering = PartitionConfig { edge_classes: EdgeClasses::Covering, ..independent.clone() };
        let classes = |p: &Partition| (0..p.nodes.len()).flat_map(|i| p.node_labels(i)).collect::<BTreeSet<usize>>().len();
        let mut missed = 0;
        for seed in 0..20 {
            let p = partition(&ds, &covering, seed).unwrap();
            check_invariants(&p, setting);
            assert_eq!(classes(&p), 10);
            missed += usize::from(classes(&partition(&ds, &independent, seed).unwrap()) < 10);
        }
        assert!(missed > 0);
    }

}
