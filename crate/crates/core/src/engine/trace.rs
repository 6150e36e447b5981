use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grouping::{GroupingOutcome, Membership};
use crate::models::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Start,
    Group,
    Global,
    /// Grouping finished; the row's clock includes the grouping overhead.
    Grouping,
    Diverged,
}

/// One CSV row, written at the start of a run and after every aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub sim_seconds: f64,
    pub epoch: f64,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub delta: f64,
    #[serde(rename = "Delta")]
    pub big_delta: f64,
    pub cost_iid: f64,
    pub cost_comm: f64,
    pub algorithm: String,
    pub seed: u64,
    pub comm_seconds: f64,
    pub compute_seconds: f64,
    pub event: Event,
}

/// Distance between the averaged federated model and the virtual global
/// model at one step. δ and Δ are maxima over the averaged model, the
/// virtual model and every local model at that step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualRow {
    pub step: usize,
    /// Global interval index, starting at 1.
    pub interval: usize,
    /// ‖w̄ − v_[l]‖.
    pub gap: f64,
    /// max_k ‖w̄^k − v^k‖.
    pub group_gap: f64,
    pub delta: f64,
    #[serde(rename = "Delta")]
    pub big_delta: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Diverged { step: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub algorithm: String,
    pub seed: u64,
    pub rows: Vec<TraceRow>,
    /// Global model after every global aggregation, with its step.
    pub global_models: Vec<(usize, ModelParams)>,
    pub final_model: ModelParams,
    /// Membership in force at the end of the run.
    pub membership: Membership,
    /// Set when the run grouped its nodes itself.
    pub grouping: Option<GroupingOutcome>,
    pub virtual_rows: Vec<VirtualRow>,
    pub status: RunStatus,
}

impl RunTrace {
    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Complete
    }

    pub(crate) fn relabel(&mut self, algorithm: &str) {
        self.algorithm = algorithm.to_string();
        for row in &mut self.rows {
            row.algorithm = algorithm.to_string();
        }
    }

    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("a trace always has its start row")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<TraceRow>, _>>()?)
}
