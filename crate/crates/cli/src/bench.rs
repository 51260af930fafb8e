use std::fs::File;
use std::path::PathBuf;

use activemix::eval::{run_benchmark, BenchmarkConfig};
use activemix::exec::Execution;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::settings::{into_typed, overlay, parse_serde, write_run_json};

/// Flags override the matching top-level keys of the grid file.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct BenchCmd {
    /// Grid description (TOML).
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_seed: Option<u64>,
    /// Fits per run, the seed fit included.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub doc_error_p: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keyword_error_p: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positive_rate: Option<f64>,
    /// Run grid cells sequentially or in parallel.
    #[arg(long, value_parser = parse_serde::<Execution>)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub execution: Option<Execution>,
}

pub fn run(cmd: BenchCmd) -> CliResult<()> {
    let path = cmd.config.as_deref().ok_or_else(|| CliError::missing("config"))?;
    let out = cmd.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let base = BenchmarkConfig::load(path)?;
    let base = match serde_json::to_value(&base).map_err(|e| CliError::runtime(e.to_string()))? {
        serde_json::Value::Object(m) => m,
        _ => unreachable!("benchmark configs are tables"),
    };
    let config: BenchmarkConfig = into_typed(overlay(base, &cmd), &path.display().to_string())?;
    config.validate()?;
    write_run_json(&out, "bench", &config)?;

    let results = run_benchmark(&config)?;
    let create = |name: &str| {
        let p = out.join(name);
        File::create(&p).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", p.display())))
    };
    results.write_rows(create("results.csv")?)?;
    results.write_mean_curves(create("curves.csv")?)?;

    println!("strategy,iteration,n_labeled,precision,recall,f1,runs");
    for p in &results.mean_curves {
        println!(
            "{},{},{:.1},{:.4},{:.4},{:.4},{}",
            p.strategy.as_str(),
            p.iteration,
            p.n_labeled,
            p.precision,
            p.recall,
            p.f1,
            p.runs
        );
    }
    for (strategy, secs) in &results.wall_clock_seconds {
        eprintln!("{strategy}: {secs:.2}s fitting and evaluating");
    }
    Ok(())
}
