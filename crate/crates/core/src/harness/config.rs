use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{DiversitySetting, EdgeClasses, Placement};
use crate::engine::{GradientMode, Hyper};
use crate::error::{Error, Result};
use crate::grouping::{AssignReading, CostWeights};
use crate::models::ModelSpec;
use crate::network::DelayMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Fedavg,
    Hierfavg,
    FedavgIc,
    /// FedAvg-IC grouping on data diversity only.
    FedavgI,
    /// FedAvg-IC grouping on communication only.
    FedavgC,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [Algorithm::Fedavg, Algorithm::Hierfavg, Algorithm::FedavgIc, Algorithm::FedavgI, Algorithm::FedavgC];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Fedavg => "fedavg",
            Algorithm::Hierfavg => "hierfavg",
            Algorithm::FedavgIc => "fedavg_ic",
            Algorithm::FedavgI => "fedavg_i",
            Algorithm::FedavgC => "fedavg_c",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config("algorithm", format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        num_classes: usize,
        input_dim: usize,
        per_class: usize,
        /// Fixes the generated data and its split across repeats; by
        /// default each repeat draws fresh blobs from its own seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    /// IDX image/label files. Without test files the training files are
    /// split into train/validation/test.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Blobs { num_classes: 10, input_dim: 20, per_class: 200, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSection {
    pub mean_examples: f64,
    pub sd_examples: f64,
    pub placement: Placement,
    pub edge_classes: EdgeClasses,
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection { mean_examples: 16.0, sd_examples: 4.0, placement: Placement::RoundRobin, edge_classes: EdgeClasses::Independent }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologyConfig {
    FatTree { k: usize },
    Jellyfish { switches: usize, degree: usize },
    Ring { switches: usize },
    /// A serialized topology; its host placement is used as is and its
    /// speeds are replaced by the configured ones.
    File { path: PathBuf },
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig::FatTree { k: 6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    #[default]
    Softmax,
    Mlp { hidden_units: usize },
}

impl ModelConfig {
    pub fn spec(self, input_dim: usize, num_classes: usize) -> ModelSpec {
        match self {
            ModelConfig::Softmax => ModelSpec::softmax(input_dim, num_classes),
            ModelConfig::Mlp { hidden_units } => ModelSpec::mlp(input_dim, hidden_units, num_classes),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    /// FedAvg aggregation period.
    pub tau: usize,
    pub tau1: usize,
    pub tau2: usize,
    /// Upper limit on steps.
    pub steps: usize,
    /// Optional simulated-time budget; the run stops at the first
    /// aggregation past it.
    pub max_seconds: Option<f64>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection { tau: 5, tau1: 1, tau2: 5, steps: 300, max_seconds: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    pub alpha_iid: f64,
    pub alpha_comm: f64,
    #[serde(default)]
    pub reading: AssignReading,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperSection {
    pub eta: f64,
    pub decay: f64,
    pub batch_size: usize,
    pub mode: GradientMode,
    pub snapshot_cap: usize,
    pub max_steady: usize,
    pub delay_mode: DelayMode,
    pub server: usize,
    pub combined: bool,
    pub track_divergences: bool,
}

impl Default for HyperSection {
    fn default() -> Self {
        let h = Hyper::default();
        HyperSection {
            eta: h.eta,
            decay: h.decay,
            batch_size: h.batch_size,
            mode: h.mode,
            snapshot_cap: h.snapshot_cap,
            max_steady: h.max_steady,
            delay_mode: h.delay_mode,
            server: h.server,
            combined: h.ic_combined,
            track_divergences: h.track_divergences,
        }
    }
}

/// One experiment: data, network, algorithm and training parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub repeats: usize,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub diversity: String,
    pub num_groups: usize,
    pub link_speed_mbps: f64,
    pub proc_speed_gflops: f64,
    /// Points of the simulated-time grid used by the summary.
    pub checkpoints: usize,
    pub dataset: DatasetConfig,
    pub partition: PartitionSection,
    pub topology: TopologyConfig,
    pub model: ModelConfig,
    pub schedule: ScheduleSection,
    /// Grouping cost weights; FedAvg-I and FedAvg-C fix their own.
    pub weights: Option<WeightsSection>,
    pub hyper: HyperSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algorithm: Algorithm::FedavgIc,
            seed: 0,
            repeats: 1,
            num_nodes: 50,
            num_edges: 10,
            diversity: "Dtt".into(),
            num_groups: 5,
            link_speed_mbps: 10.0,
            proc_speed_gflops: 5.0,
            checkpoints: 50,
            dataset: DatasetConfig::default(),
            partition: PartitionSection::default(),
            topology: TopologyConfig::default(),
            model: ModelConfig::default(),
            schedule: ScheduleSection::default(),
            weights: None,
            hyper: HyperSection::default(),
        }
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `path` (dotted) in `table`, creating intermediate tables.
pub fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::config(path, "empty key"))?;
    let mut cur = table;
    for (depth, part) in parts.iter().enumerate() {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::config(parts[..=depth].join("."), "is not a table"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Sets `path` like [`set_path`], but a missing top-level section is first
/// filled with its defaults, so `dataset.seed=3` keeps the default dataset.
pub fn apply_override(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let section = path.split('.').next().unwrap_or_default();
    if path.contains('.') && !table.contains_key(section) {
        let defaults = toml::Table::try_from(ExperimentConfig::default()).expect("defaults serialize");
        if let Some(v @ toml::Value::Table(_)) = defaults.get(section) {
            table.insert(section.to_string(), v.clone());
        }
    }
    set_path(table, path, value)
}

/// Parses `key=value`; the value is read as a TOML literal and falls back
/// to a bare string.
pub fn parse_override(spec: &str) -> Result<(String, toml::Value)> {
    let (k, v) = spec.split_once('=').ok_or_else(|| Error::config(spec, "override must look like key=value"))?;
    Ok((k.trim().to_string(), parse_literal(v.trim())))
}

impl ExperimentConfig {
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: ExperimentConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let table: toml::Table = s.parse().map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
        Self::from_table(table)
    }

    /// Reads `path` (if any), applies `key=value` overrides on top and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut table = match path {
            Some(p) => std::fs::read_to_string(p)?
                .parse::<toml::Table>()
                .map_err(|e| Error::config(p.display().to_string(), e.message().to_string()))?,
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            apply_override(&mut table, k, v.clone())?;
        }
        Self::from_table(table)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn diversity(&self) -> Result<DiversitySetting> {
        self.diversity.parse().map_err(|e| match e {
            Error::Config { reason, .. } => Error::config("diversity", reason),
            other => other,
        })
    }

    /// Cost weights actually used by the grouping algorithms.
    pub fn cost_weights(&self) -> Result<CostWeights> {
        match (self.algorithm, self.weights) {
            (Algorithm::FedavgI, Some(w)) if w.alpha_comm != 0.0 => Err(Error::config("weights.alpha_comm", "fedavg_i groups on data diversity only")),
            (Algorithm::FedavgC, Some(w)) if w.alpha_iid != 0.0 => Err(Error::config("weights.alpha_iid", "fedavg_c groups on communication only")),
            (_, Some(w)) => Ok(CostWeights::new(w.alpha_iid, w.alpha_comm)?.with_reading(w.reading)),
            (Algorithm::FedavgI, None) => CostWeights::new(1.0, 0.0),
            (Algorithm::FedavgC, None) => CostWeights::new(0.0, 1.0),
            _ => Ok(CostWeights::default()),
        }
    }

    pub fn hyper(&self) -> Hyper {
        let h = &self.hyper;
        Hyper {
            eta: h.eta,
            decay: h.decay,
            batch_size: h.batch_size,
            mode: h.mode,
            snapshot_cap: h.snapshot_cap,
            max_steady: h.max_steady,
            delay_mode: h.delay_mode,
            server: h.server,
            ic_combined: h.combined,
            track_divergences: h.track_divergences,
            track_virtual: false,
            max_seconds: self.schedule.max_seconds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::config("repeats", "must be at least 1"));
        }
        if self.num_nodes == 0 {
            return Err(Error::config("num_nodes", "must be positive"));
        }
        if self.num_edges == 0 || self.num_edges > self.num_nodes {
            return Err(Error::config("num_edges", "must lie in 1..=num_nodes"));
        }
        self.diversity()?;
        if self.num_groups == 0 || self.num_groups > self.num_nodes {
            return Err(Error::config("num_groups", "must lie in 1..=num_nodes"));
        }
        for (field, v) in [("link_speed_mbps", self.link_speed_mbps), ("proc_speed_gflops", self.proc_speed_gflops)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.checkpoints == 0 {
            return Err(Error::config("checkpoints", "must be positive"));
        }
        if let DatasetConfig::Blobs { num_classes, input_dim, per_class, .. } = self.dataset {
            if num_classes < 2 || input_dim == 0 || per_class < 5 {
                return Err(Error::config("dataset", "blobs need >= 2 classes, >= 1 dimension and >= 5 examples per class"));
            }
        }
        if let DatasetConfig::Idx { test_images, test_labels, .. } = &self.dataset {
            if test_images.is_some() != test_labels.is_some() {
                return Err(Error::config("dataset.test_images", "test images and labels go together"));
            }
        }
        if !(self.partition.mean_examples >= 1.0 && self.partition.sd_examples >= 0.0) {
            return Err(Error::config("partition.mean_examples", "mean must be >= 1 and sd >= 0"));
        }
        if let ModelConfig::Mlp { hidden_units: 0 } = self.model {
            return Err(Error::config("model.hidden_units", "must be positive"));
        }
        if self.hyper.server >= self.num_nodes {
            return Err(Error::config("hyper.server", "must name an existing node"));
        }
        let s = &self.schedule;
        let sched = match self.algorithm {
            Algorithm::Fedavg => crate::engine::Schedule::fedavg(s.tau, s.steps),
            _ => crate::engine::Schedule::group(s.tau1, s.tau2, s.steps),
        };
        sched.validate()?;
        self.hyper().validate()?;
        self.cost_weights()?;
        Ok(())
    }
}
