use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Algorithm, DatasetConfig, ExperimentConfig, TopologyConfig};
use crate::data::{load_idx, partition, split, synth_blobs, Partition, PartitionConfig};
use crate::engine::{self, RunStatus, RunTrace, Schedule};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::network::{build_fat_tree, build_jellyfish, ring, Speeds, Topology, TopologyDoc};

/// Everything a single run needs besides the algorithm.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub partition: Partition,
    pub topology: Topology,
    pub spec: ModelSpec,
}

/// Data, partition and network for `seed`. Algorithms sharing a seed see the
/// same inputs.
pub fn build_inputs(cfg: &ExperimentConfig, seed: u64) -> Result<Inputs> {
    let (train, val, test) = match &cfg.dataset {
        DatasetConfig::Blobs { num_classes, input_dim, per_class, seed: data_seed } => {
            let d = data_seed.unwrap_or(seed);
            let s = split(&synth_blobs(*num_classes, *input_dim, *per_class, d)?, d)?;
            (s.train, s.val, s.test)
        }
        DatasetConfig::Idx { train_images, train_labels, test_images, test_labels } => {
            let s = split(&load_idx(train_images, train_labels)?, seed)?;
            match (test_images, test_labels) {
                (Some(i), Some(l)) => (s.train, s.val, load_idx(i, l)?),
                _ => (s.train, s.val, s.test),
            }
        }
    };
    let pcfg = PartitionConfig {
        placement: cfg.partition.placement,
        edge_classes: cfg.partition.edge_classes,
        ..PartitionConfig::new(cfg.num_nodes, cfg.num_edges, cfg.diversity()?, cfg.partition.mean_examples, cfg.partition.sd_examples)
    };
    let spec = cfg.model.spec(train.input_dim, train.num_classes.max(test.num_classes));
    let part = partition(&train, &pcfg, seed)?.with_holdout(val, test);
    if part.used_replacement() {
        log::warn!("seed {seed}: some nodes needed examples drawn with replacement");
    }
    let speeds = Speeds { link: cfg.link_speed_mbps * 1e6, proc: cfg.proc_speed_gflops * 1e9 };
    let placement = part.edge_of();
    let topology = match &cfg.topology {
        TopologyConfig::FatTree { k } => build_fat_tree(*k, &placement, speeds, seed)?,
        TopologyConfig::Jellyfish { switches, degree } => build_jellyfish(*switches, *degree, &placement, speeds, seed)?,
        TopologyConfig::Ring { switches } => ring(*switches, &placement, speeds)?,
        TopologyConfig::File { path } => {
            let doc: TopologyDoc = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            if doc.hosts.len() != cfg.num_nodes {
                return Err(Error::config("topology.path", format!("file places {} hosts, config has {} nodes", doc.hosts.len(), cfg.num_nodes)));
            }
            Topology::from_doc(&doc)?.with_speeds(speeds)?
        }
    };
    Ok(Inputs { partition: part, topology, spec })
}

/// One run of the configured algorithm on prepared inputs.
pub fn run_algorithm(cfg: &ExperimentConfig, inputs: &Inputs, seed: u64) -> Result<RunTrace> {
    let s = &cfg.schedule;
    let hyper = cfg.hyper();
    let (p, t, spec) = (&inputs.partition, &inputs.topology, inputs.spec);
    let mut trace = match cfg.algorithm {
        Algorithm::Fedavg => engine::run_fedavg(p, t, spec, Schedule::fedavg(s.tau, s.steps), &hyper, seed)?,
        Algorithm::Hierfavg => engine::run_hierfavg(p, t, spec, Schedule::group(s.tau1, s.tau2, s.steps), &hyper, seed)?,
        Algorithm::FedavgIc | Algorithm::FedavgI | Algorithm::FedavgC => {
            let w = cfg.cost_weights()?;
            engine::run_fedavg_ic(p, t, spec, Schedule::fedavg_ic(s.tau1, s.tau2, s.steps), &w, cfg.num_groups, &hyper, seed)?
        }
    };
    trace.relabel(cfg.algorithm.name());
    Ok(trace)
}

pub fn run_once(cfg: &ExperimentConfig, seed: u64) -> Result<(Inputs, RunTrace)> {
    let inputs = build_inputs(cfg, seed)?;
    let trace = run_algorithm(cfg, &inputs, seed)?;
    Ok((inputs, trace))
}

/// Mean and standard deviation of the traces on a shared simulated-time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sim_seconds: f64,
    pub test_accuracy_mean: f64,
    pub test_accuracy_sd: f64,
    pub train_loss_mean: f64,
    pub train_loss_sd: f64,
    pub runs: usize,
}

/// Last row at or before `t` (the start row when nothing happened yet).
pub fn value_at(trace: &RunTrace, t: f64) -> &engine::TraceRow {
    let idx = trace.rows.partition_point(|r| r.sim_seconds <= t);
    &trace.rows[idx.saturating_sub(1)]
}

/// Sample mean and standard deviation; the deviation of one value is 0.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `checkpoints` evenly spaced times up to the shortest run's end.
pub fn summarize(traces: &[RunTrace], checkpoints: usize) -> Vec<SummaryRow> {
    let horizon = traces.iter().map(|t| t.last().sim_seconds).fold(f64::INFINITY, f64::min);
    if traces.is_empty() || !horizon.is_finite() {
        return Vec::new();
    }
    (1..=checkpoints)
        .map(|j| {
            let t = horizon * j as f64 / checkpoints as f64;
            let acc: Vec<f64> = traces.iter().map(|tr| value_at(tr, t).test_accuracy).collect();
            let loss: Vec<f64> = traces.iter().map(|tr| value_at(tr, t).train_loss).collect();
            let (am, asd) = mean_sd(&acc);
            let (lm, lsd) = mean_sd(&loss);
            SummaryRow { sim_seconds: t, test_accuracy_mean: am, test_accuracy_sd: asd, train_loss_mean: lm, train_loss_sd: lsd, runs: traces.len() }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub trace: String,
    pub trace_sha256: String,
    pub status: RunStatus,
    pub final_test_accuracy: f64,
    pub final_sim_seconds: f64,
    pub used_replacement: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    /// SHA-256 over the canonical config and the bytes of any input files.
    pub input_sha256: String,
    pub runs: Vec<RunRecord>,
    pub complete: bool,
    /// Wall-clock creation time; the only field that differs between reruns.
    pub created_unix: u64,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn input_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg)?);
    if let DatasetConfig::Idx { train_images, train_labels, test_images, test_labels } = &cfg.dataset {
        for p in [Some(train_images), Some(train_labels), test_images.as_ref(), test_labels.as_ref()].into_iter().flatten() {
            h.update(std::fs::read(p)?);
        }
    }
    if let TopologyConfig::File { path } = &cfg.topology {
        h.update(std::fs::read(path)?);
    }
    Ok(hex(&h.finalize()))
}

fn write_json(path: PathBuf, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Result of [`run_experiment`]: the manifest and the traces it describes.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub traces: Vec<RunTrace>,
}

/// Runs seeds `seed..seed + repeats` and writes traces, inputs, a summary and
/// a manifest into `dir`. Diverged runs are recorded and make the manifest
/// incomplete.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<Experiment> {
    cfg.validate()?;
    std::fs::create_dir_all(dir)?;
    let mut records = Vec::new();
    let mut traces = Vec::new();
    for r in 0..cfg.repeats {
        let seed = cfg.seed + r as u64;
        let (inputs, trace) = run_once(cfg, seed)?;
        let csv = trace.to_csv_string()?;
        let name = format!("run_{seed}.csv");
        std::fs::write(dir.join(&name), &csv)?;
        std::fs::write(dir.join(format!("partition_{seed}.json")), inputs.partition.to_json()?)?;
        write_json(dir.join(format!("topology_{seed}.json")), &inputs.topology.to_doc())?;
        write_json(dir.join(format!("membership_{seed}.json")), &serde_json::json!({ "membership": trace.membership, "grouping": trace.grouping }))?;
        let last = trace.rows.iter().rev().find(|r| r.test_accuracy.is_finite());
        records.push(RunRecord {
            seed,
            trace: name,
            trace_sha256: sha256_hex(csv.as_bytes()),
            status: trace.status.clone(),
            final_test_accuracy: last.map_or(f64::NAN, |r| r.test_accuracy),
            final_sim_seconds: trace.last().sim_seconds,
            used_replacement: inputs.partition.used_replacement(),
        });
        traces.push(trace);
    }
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    for row in summarize(&traces, cfg.checkpoints) {
        w.serialize(row)?;
    }
    w.flush()?;
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        input_sha256: input_hash(cfg)?,
        complete: records.iter().all(|r| r.status == RunStatus::Complete),
        runs: records,
        created_unix: std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    write_json(dir.join("manifest.json"), &manifest)?;
    Ok(Experiment { dir: dir.to_path_buf(), manifest, traces })
}

/// Divergence error for the first diverged run, if any.
pub fn divergence_of(exp: &Experiment) -> Option<Error> {
    exp.manifest.runs.iter().find_map(|r| match &r.status {
        RunStatus::Diverged { step, reason } => Some(Error::Divergence { step: *step, reason: format!("seed {}: {reason}", r.seed) }),
        RunStatus::Complete => None,
    })
}
