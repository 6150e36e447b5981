//! Experiment configuration, runs with on-disk artifacts, comparisons,
//! sweeps and the invariant check suite.

mod check;
mod compare;
mod config;
mod run;

use std::path::Path;

use crate::error::{Error, Result};

pub use check::{run_checks, CheckOutcome};
pub use compare::{compare, compare_traces, plateau_time, time_to_accuracy, write_comparison, ComparisonRow, Metric};
pub use config::{
    apply_override, parse_override, set_path, Algorithm, DatasetConfig, ExperimentConfig, HyperSection, ModelConfig, PartitionSection, ScheduleSection,
    TopologyConfig, WeightsSection,
};
pub use run::{
    build_inputs, divergence_of, input_hash, mean_sd, run_algorithm, run_experiment, run_once, sha256_hex, summarize, value_at, Experiment,
    Inputs, Manifest, RunRecord, SummaryRow,
};

/// Every combination of the listed values, in odometer order (last key fastest).
pub fn cartesian(axes: &[(String, Vec<toml::Value>)]) -> Vec<Vec<(String, toml::Value)>> {
    axes.iter().fold(vec![Vec::new()], |acc, (key, values)| {
        acc.into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut next = prefix.clone();
                    next.push((key.clone(), v.clone()));
                    next
                })
            })
            .collect()
    })
}

fn label_of(combo: &[(String, toml::Value)]) -> String {
    combo
        .iter()
        .map(|(k, v)| {
            let v = match v {
                toml::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            format!("{k}={v}")
        })
        .collect::<Vec<_>>()
        .join(",")
        .replace(['/', ' ', '"'], "_")
}

/// Runs `base` once per combination of `axes` into `dir/<key=value,...>`.
pub fn sweep(base: &toml::Table, axes: &[(String, Vec<toml::Value>)], dir: &Path) -> Result<Vec<(String, Experiment)>> {
    if axes.iter().any(|(_, v)| v.is_empty()) {
        return Err(Error::config("sweep", "every swept key needs at least one value"));
    }
    let mut out = Vec::new();
    for combo in cartesian(axes) {
        let mut table = base.clone();
        for (k, v) in &combo {
            apply_override(&mut table, k, v.clone())?;
        }
        let cfg = ExperimentConfig::from_table(table)?;
        let label = label_of(&combo);
        let exp = run_experiment(&cfg, &dir.join(&label))?;
        out.push((label, exp));
    }
    Ok(out)
}
