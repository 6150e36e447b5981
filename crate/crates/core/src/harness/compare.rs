use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ExperimentConfig};
use super::run::{mean_sd, run_experiment, summarize, value_at};
use crate::engine::RunTrace;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Simulated seconds until the test accuracy FedAvg ends with.
    TimeToAccuracy,
    /// Test accuracy at a shared simulated-time budget.
    AccuracyAtTime,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time_to_accuracy" => Ok(Metric::TimeToAccuracy),
            "accuracy_at_time" => Ok(Metric::AccuracyAtTime),
            _ => Err(Error::config("metric", format!("unknown metric `{s}`"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::TimeToAccuracy => "time_to_accuracy",
            Metric::AccuracyAtTime => "accuracy_at_time",
        })
    }
}

/// One line of a comparison. `None` means the target was never reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub metric: Metric,
    pub value_mean: Option<f64>,
    pub value_sd: Option<f64>,
    /// Relative to FedAvg: time ratio for time-to-accuracy (higher is
    /// faster), accuracy ratio for accuracy-at-time.
    pub speedup: Option<f64>,
}

fn final_accuracy(trace: &RunTrace) -> f64 {
    trace.rows.iter().rev().find(|r| r.test_accuracy.is_finite()).map_or(f64::NAN, |r| r.test_accuracy)
}

/// First simulated second at which `trace` reaches `target`.
pub fn time_to_accuracy(trace: &RunTrace, target: f64) -> Option<f64> {
    trace.rows.iter().find(|r| r.test_accuracy >= target).map(|r| r.sim_seconds)
}

/// Earliest checkpoint at which the mean accuracy curve of `traces` comes
/// within `tol` of its best value.
pub fn plateau_time(traces: &[RunTrace], checkpoints: usize, tol: f64) -> Option<f64> {
    let rows = summarize(traces, checkpoints);
    let best = rows.iter().map(|r| r.test_accuracy_mean).fold(f64::NEG_INFINITY, f64::max);
    rows.iter().find(|r| r.test_accuracy_mean >= best - tol).map(|r| r.sim_seconds)
}

/// Compares labelled sets of runs against the set labelled by `baseline`.
/// Runs are paired by position (same seed): for time-to-accuracy, run `r`
/// of every set chases the final accuracy of baseline run `r`. A set that
/// misses the target in any run gets no value. Accuracy-at-time uses
/// `budget`, defaulting to the shortest run of all.
pub fn compare_traces(sets: &[(String, Vec<RunTrace>)], baseline: usize, metric: Metric, budget: Option<f64>) -> Result<Vec<ComparisonRow>> {
    let base = &sets.get(baseline).ok_or_else(|| Error::config("compare", "baseline index out of range"))?.1;
    if sets.iter().any(|(_, runs)| runs.len() != base.len() || runs.is_empty()) {
        return Err(Error::config("repeats", "every compared configuration needs the same number of runs"));
    }
    let values: Vec<Option<Vec<f64>>> = match metric {
        Metric::TimeToAccuracy => sets
            .iter()
            .map(|(_, runs)| runs.iter().zip(base).map(|(run, b)| time_to_accuracy(run, final_accuracy(b))).collect())
            .collect(),
        Metric::AccuracyAtTime => {
            let shortest = sets.iter().flat_map(|(_, r)| r).map(|t| t.last().sim_seconds).fold(f64::INFINITY, f64::min);
            let t = budget.unwrap_or(shortest);
            sets.iter().map(|(_, runs)| Some(runs.iter().map(|r| value_at(r, t).test_accuracy).collect())).collect()
        }
    };
    let stats: Vec<Option<(f64, f64)>> = values.iter().map(|v| v.as_deref().map(mean_sd)).collect();
    let base_mean = stats[baseline].map(|s| s.0);
    Ok(sets
        .iter()
        .zip(&stats)
        .map(|((label, _), s)| {
            let speedup = match (metric, s, base_mean) {
                (Metric::TimeToAccuracy, Some((m, _)), Some(b)) => Some(if *m == 0.0 && b == 0.0 { 1.0 } else { b / m }),
                (Metric::AccuracyAtTime, Some((m, _)), Some(b)) => Some(m / b),
                _ => None,
            };
            ComparisonRow { label: label.clone(), metric, value_mean: s.map(|s| s.0), value_sd: s.map(|s| s.1), speedup }
        })
        .collect())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x}"))
}

pub fn write_comparison(rows: &[ComparisonRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["label", "metric", "value_mean", "value_sd", "speedup"])?;
    for r in rows {
        w.write_record([r.label.clone(), r.metric.to_string(), fmt_opt(r.value_mean), fmt_opt(r.value_sd), fmt_opt(r.speedup)])?;
    }
    w.flush()?;
    Ok(())
}

fn shared_inputs(a: &ExperimentConfig, b: &ExperimentConfig) -> bool {
    a.seed == b.seed
        && a.repeats == b.repeats
        && a.num_nodes == b.num_nodes
        && a.num_edges == b.num_edges
        && a.diversity == b.diversity
        && a.dataset == b.dataset
        && a.partition == b.partition
        && a.topology == b.topology
}

/// Runs every configuration into `dir/<label>` and writes
/// `dir/comparison.csv`. The first FedAvg configuration is the baseline.
pub fn compare(configs: &[(String, ExperimentConfig)], metric: Metric, budget: Option<f64>, dir: &Path) -> Result<Vec<ComparisonRow>> {
    let baseline = configs
        .iter()
        .position(|(_, c)| c.algorithm == Algorithm::Fedavg)
        .ok_or_else(|| Error::config("algorithm", "comparison needs a fedavg configuration as baseline"))?;
    if let Some((label, _)) = configs.iter().find(|(_, c)| !shared_inputs(c, &configs[baseline].1)) {
        return Err(Error::config("seed", format!("`{label}` does not share the baseline's data, partition and seeds")));
    }
    let mut sets = Vec::new();
    for (label, cfg) in configs {
        let exp = run_experiment(cfg, &dir.join(label))?;
        sets.push((label.clone(), exp.traces));
    }
    let rows = compare_traces(&sets, baseline, metric, budget)?;
    write_comparison(&rows, &dir.join("comparison.csv"))?;
    Ok(rows)
}
