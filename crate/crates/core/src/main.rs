use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedgroup::harness::{self, Algorithm, ExperimentConfig, Metric};
use fedgroup::{Error, Result};

#[derive(Parser)]
#[command(name = "fedgroup", version, about = "Grouped federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration `repeats` times and write its artifacts.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run several algorithms on shared inputs and write comparison.csv.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Algorithms to compare; fedavg is added as the baseline if missing.
        #[arg(long, value_delimiter = ',', default_value = "fedavg,hierfavg,fedavg_ic")]
        algorithms: Vec<Algorithm>,
        #[arg(long, default_value = "time_to_accuracy")]
        metric: Metric,
        /// Simulated-time budget in seconds for accuracy_at_time.
        #[arg(long)]
        budget: Option<f64>,
    },
    /// Run the cartesian product of `--axis key=v1,v2,...` values.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long = "axis", value_name = "KEY=V1,V2")]
        axes: Vec<String>,
    },
    /// Run the built-in invariant checks.
    Check,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    num_groups: Option<usize>,
    #[arg(long)]
    link_speed_mbps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Any other config key, e.g. `--set hyper.eta=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Artifact directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, toml::Value)>> {
        let mut out = Vec::new();
        if let Some(a) = self.algorithm {
            out.push(("algorithm".into(), toml::Value::String(a.name().into())));
        }
        if let Some(k) = self.num_groups {
            out.push(("num_groups".into(), toml::Value::Integer(k as i64)));
        }
        if let Some(v) = self.link_speed_mbps {
            out.push(("link_speed_mbps".into(), toml::Value::Float(v)));
        }
        if let Some(s) = self.seed {
            out.push(("seed".into(), toml::Value::Integer(s as i64)));
        }
        if let Some(r) = self.repeats {
            out.push(("repeats".into(), toml::Value::Integer(r as i64)));
        }
        if let Some(t) = self.steps {
            out.push(("schedule.steps".into(), toml::Value::Integer(t as i64)));
        }
        for s in &self.set {
            out.push(harness::parse_override(s)?);
        }
        Ok(out)
    }

    fn table(&self) -> Result<toml::Table> {
        let mut table = match &self.config {
            Some(p) => std::fs::read_to_string(p)?.parse::<toml::Table>().map_err(|e| Error::Config {
                field: p.display().to_string(),
                reason: e.message().to_string(),
            })?,
            None => toml::Table::new(),
        };
        for (k, v) in self.overrides()? {
            harness::apply_override(&mut table, &k, v)?;
        }
        Ok(table)
    }

    fn load(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::load(self.config.as_deref(), &self.overrides()?)
    }
}

fn report(exp: &harness::Experiment) -> Result<()> {
    for r in &exp.manifest.runs {
        println!("seed {}: accuracy {:.4} at {:.3}s ({})", r.seed, r.final_test_accuracy, r.final_sim_seconds, r.trace);
    }
    println!("artifacts in {}", exp.dir.display());
    match harness::divergence_of(exp) {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn parse_axis(spec: &str) -> Result<(String, Vec<toml::Value>)> {
    let (key, values) = spec.split_once('=').ok_or_else(|| Error::Config {
        field: spec.to_string(),
        reason: "axis must look like key=v1,v2".into(),
    })?;
    let values = values
        .split(',')
        .map(|v| harness::parse_override(&format!("{key}={v}")).map(|(_, v)| v))
        .collect::<Result<Vec<_>>>()?;
    Ok((key.trim().to_string(), values))
}

fn compare(common: &Common, algorithms: &[Algorithm], metric: Metric, budget: Option<f64>) -> Result<()> {
    let base = common.load()?;
    let mut list = algorithms.to_vec();
    if !list.contains(&Algorithm::Fedavg) {
        list.insert(0, Algorithm::Fedavg);
    }
    let configs: Vec<(String, ExperimentConfig)> = list
        .iter()
        .map(|&a| (a.name().to_string(), ExperimentConfig { algorithm: a, ..base.clone() }))
        .collect();
    for (_, c) in &configs {
        c.validate()?;
    }
    let rows = harness::compare(&configs, metric, budget, &common.out)?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    println!("{:<12} {:>12} {:>10} {:>8}", "algorithm", metric.to_string(), "sd", "speedup");
    for r in &rows {
        println!("{:<12} {:>12} {:>10} {:>8}", r.label, fmt(r.value_mean), fmt(r.value_sd), fmt(r.speedup));
    }
    println!("wrote {}", common.out.join("comparison.csv").display());
    Ok(())
}

fn sweep(common: &Common, axes: &[String]) -> Result<()> {
    let axes = axes.iter().map(|a| parse_axis(a)).collect::<Result<Vec<_>>>()?;
    let runs = harness::sweep(&common.table()?, &axes, &common.out)?;
    for (label, exp) in &runs {
        let (mean, sd) = harness::mean_sd(&exp.manifest.runs.iter().map(|r| r.final_test_accuracy).collect::<Vec<_>>());
        println!("{label}: final accuracy {mean:.4} ± {sd:.4}");
    }
    runs.iter().find_map(|(_, e)| harness::divergence_of(e)).map_or(Ok(()), Err)
}

fn check() -> Result<bool> {
    let outcomes = harness::run_checks()?;
    for c in &outcomes {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(outcomes.iter().all(|c| c.passed))
}

fn execute(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Run { common } => {
            let cfg = common.load()?;
            report(&harness::run_experiment(&cfg, &common.out)?)?;
        }
        Command::Compare { common, algorithms, metric, budget } => compare(common, algorithms, *metric, *budget)?,
        Command::Sweep { common, axes } => sweep(common, axes)?,
        Command::Check => return check(),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
