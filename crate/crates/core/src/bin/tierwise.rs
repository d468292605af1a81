use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use tierwise::features::{bin_boundaries, ObsLayout};
use tierwise::harness::{
    load_msrc, output_dir, run_experiment, sweep, write_outputs, ExperimentConfig, GridSpec, HarnessError,
};
use tierwise::trace::{working_set_pages, workload_stats};

/// Trace-driven hybrid storage placement experiments.
#[derive(Parser)]
#[command(name = "tierwise", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv plus JSON reports.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config and TIERWISE_OUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the cross product of a parameter grid and write sweep.csv.
    Sweep {
        config: PathBuf,
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print workload statistics of an MSRC trace.
    Stats {
        trace: PathBuf,
        /// Also print the feature bin boundaries.
        #[arg(long)]
        bins: bool,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load(config: &Path) -> Result<ExperimentConfig, HarnessError> {
    let cfg = ExperimentConfig::load(config)?;
    cfg.validate(&base_dir(config))?;
    Ok(cfg)
}

fn execute(cmd: Command) -> Result<serde_json::Value, HarnessError> {
    match cmd {
        Command::Run { config, out } => {
            let cfg = load(&config)?;
            let records = run_experiment(&cfg, &base_dir(&config))?;
            let dir = out.unwrap_or_else(|| output_dir(&cfg));
            let files = write_outputs(&cfg, &records, &dir, "metrics")?;
            Ok(json!({
                "config_hash": cfg.hash(),
                "rows": records.iter().map(|r| &r.row).collect::<Vec<_>>(),
                "files": files,
            }))
        }
        Command::Sweep { config, grid, out } => {
            let cfg = load(&config)?;
            let grid = GridSpec::load(&grid)?;
            let records = sweep(&cfg, &grid, &base_dir(&config))?;
            let dir = out.unwrap_or_else(|| output_dir(&cfg));
            let files = write_outputs(&cfg, &records, &dir, "sweep")?;
            Ok(json!({
                "config_hash": cfg.hash(),
                "points": grid.points()?.len(),
                "rows": records.len(),
                "files": files,
            }))
        }
        Command::Stats { trace, bins } => {
            let requests = load_msrc(&trace)?;
            let stats = workload_stats(&requests).map_err(|source| HarnessError::Trace {
                path: trace.display().to_string(),
                source,
            })?;
            let mut v = json!({
                "trace": trace,
                "stats": stats,
                "working_set_pages": working_set_pages(&requests),
            });
            if bins {
                v["feature_bins"] = json!(bin_boundaries(ObsLayout::new(2)));
            }
            Ok(v)
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            Ok(json!({ "valid": true, "config_hash": cfg.hash() }))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = json!({ "error": "usage", "message": e.to_string().trim() });
            eprintln!("{msg}");
            return ExitCode::from(2);
        }
    };
    match execute(cli.cmd) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("output serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
