//! Experiment plumbing: config loading, trace materialization, policy runs
//! against a Fast-Only reference, parameter sweeps and report files.
//!
//! `metrics.csv` columns, in order: `config_hash, seed, grid_point, workload,
//! policy, preset, fast_capacity_pages, working_set_pages, requests,
//! avg_latency_ns, normalized_latency, total_latency_ns, iops, eviction_ratio,
//! fast_evictions, total_evictions, fast_preference, promotions,
//! background_ns, explored_actions, training_rounds, final_loss`.

mod config;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    ExperimentConfig, GridPoint, GridSpec, MixConfig, OutputConfig, PolicyConfig, SystemConfig, TraceSource,
    CONFIG_VERSION,
};

use crate::agent::{run_policy, Agent, AgentConfig, MetricsReport, Policy, PolicyError, RunOptions};
use crate::baselines::{Cde, FastOnly, Hps, Oracle, RandomPlace, SlowOnly, TriHeuristic};
use crate::hssenv::{DeviceProfile, HssError, HssState};
use crate::rlcore::write_checkpoint;
use crate::trace::{
    gen_analog, gen_synthetic, mix_traces, parse_msrc, working_set_pages, AnalogProfile, StorageRequest, SyntheticSpec,
    TraceError,
};

/// Overrides `output.dir`.
pub const OUT_DIR_ENV: &str = "TIERWISE_OUT_DIR";
/// Default analog length when the config does not give one.
pub const ANALOG_DEFAULT_REQUESTS: usize = 20_000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{field}: {message}")]
    Config { field: String, message: String },
    #[error("{path}: {source}")]
    Trace { path: String, source: TraceError },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("the parameter grid is empty")]
    EmptyGrid,
    #[error("storage system: {0}")]
    Hss(#[from] HssError),
    #[error("{workload}/{policy}: {source}")]
    Run {
        workload: String,
        policy: String,
        source: PolicyError,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config { .. } => "config",
            HarnessError::Trace { .. } => "trace",
            HarnessError::Io { .. } => "io",
            HarnessError::EmptyGrid => "empty_grid",
            HarnessError::Hss(_) => "system",
            HarnessError::Run { .. } => "run",
            HarnessError::Csv(_) => "csv",
        }
    }

    /// Machine-readable form for the CLI.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::json!({
            "error": self.kind(),
            "message": self.to_string(),
        });
        match self {
            HarnessError::Config { field, .. } => v["field"] = field.clone().into(),
            HarnessError::Trace { path, source } => {
                v["path"] = path.clone().into();
                if let TraceError::Parse { line, .. } | TraceError::UnknownOp { line, .. } = source {
                    v["line"] = (*line).into();
                }
            }
            HarnessError::Io { path, .. } => v["path"] = path.clone().into(),
            _ => {}
        }
        v
    }
}

/// A named request stream ready to replay.
#[derive(Debug, Clone)]
pub struct Workload {
    pub name: String,
    pub requests: Vec<StorageRequest>,
}

pub fn load_msrc(path: &Path) -> Result<Vec<StorageRequest>, HarnessError> {
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    parse_msrc(std::io::BufReader::new(file)).map_err(|source| HarnessError::Trace {
        path: path.display().to_string(),
        source,
    })
}

fn materialize(src: &TraceSource, seed: u64, base_dir: &Path) -> Result<Workload, HarnessError> {
    match src {
        TraceSource::Msrc { path, name, limit } => {
            let full = base_dir.join(path);
            let mut requests = load_msrc(&full)?;
            if let Some(n) = limit {
                requests.truncate(*n);
            }
            let name = name.clone().unwrap_or_else(|| {
                path.file_stem()
                    .map_or("trace".into(), |s| s.to_string_lossy().into_owned())
            });
            Ok(Workload { name, requests })
        }
        TraceSource::Synthetic {
            name,
            n_requests,
            hot_page_count,
            cold_page_count,
            hot_access_fraction,
            write_fraction,
            request_size,
            seed: own_seed,
        } => {
            let spec = SyntheticSpec {
                n_requests: *n_requests,
                hot_page_count: *hot_page_count,
                cold_page_count: *cold_page_count,
                hot_access_fraction: *hot_access_fraction,
                write_fraction: *write_fraction,
                request_size: *request_size,
                seed: own_seed.unwrap_or(seed),
            };
            let requests = gen_synthetic(&spec).map_err(|source| HarnessError::Trace {
                path: "synthetic".into(),
                source,
            })?;
            Ok(Workload {
                name: name.clone().unwrap_or_else(|| "synthetic".into()),
                requests,
            })
        }
        TraceSource::Analog {
            profile,
            n_requests,
            seed: own_seed,
        } => {
            let p = AnalogProfile::by_name(profile).ok_or_else(|| HarnessError::Config {
                field: "traces.profile".into(),
                message: format!("unknown workload `{profile}`"),
            })?;
            let n = n_requests.unwrap_or(ANALOG_DEFAULT_REQUESTS);
            Ok(Workload {
                name: p.name.to_string(),
                requests: gen_analog(p, n, own_seed.unwrap_or(seed)),
            })
        }
    }
}

/// The workloads an experiment replays: each trace on its own, or one mix.
pub fn load_workloads(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Vec<Workload>, HarnessError> {
    let loaded = cfg
        .traces
        .iter()
        .map(|t| materialize(t, cfg.seed, base_dir))
        .collect::<Result<Vec<_>, _>>()?;
    match &cfg.mix {
        None => Ok(loaded),
        Some(mix) => {
            let streams: Vec<Vec<StorageRequest>> = loaded.into_iter().map(|w| w.requests).collect();
            let requests = mix_traces(&streams, &mix.offsets_ns).map_err(|source| HarnessError::Trace {
                path: "mix".into(),
                source,
            })?;
            Ok(vec![Workload {
                name: mix.name.clone(),
                requests,
            }])
        }
    }
}

/// Tier profiles for a workload with `working_set` distinct pages.
pub fn build_tiers(system: &SystemConfig, working_set: u64) -> Vec<DeviceProfile> {
    let preset = system.preset;
    match (&system.capacity_pages, &system.capacity_pct) {
        (Some(pages), _) => {
            let names = preset.device_names();
            let mut tiers: Vec<DeviceProfile> = preset.build(working_set, preset.default_upper_pct());
            for (t, &cap) in tiers.iter_mut().zip(pages) {
                *t = DeviceProfile::by_name(&t.name, cap).expect("preset device names are known");
            }
            debug_assert_eq!(tiers.len(), names.len());
            tiers
        }
        (None, Some(pct)) => preset.build(working_set, pct),
        (None, None) => preset.build(working_set, preset.default_upper_pct()),
    }
}

/// The Fast-Only reference system: the same devices with a fast tier that
/// holds the whole working set.
pub fn fast_only_tiers(tiers: &[DeviceProfile], working_set: u64) -> Vec<DeviceProfile> {
    let mut t = tiers.to_vec();
    t[0] = DeviceProfile::by_name(&t[0].name, working_set.max(1)).unwrap_or_else(|| DeviceProfile {
        capacity_pages: working_set.max(1),
        ..t[0].clone()
    });
    t
}

fn make_policy(cfg: &ExperimentConfig, hss: &HssState) -> Result<Box<dyn Policy>, PolicyError> {
    Ok(match &cfg.policy {
        PolicyConfig::Agent { k_p, .. } => Box::new(Agent::new(
            AgentConfig {
                hyperparams: cfg.hyperparams.clone(),
                k_p: *k_p,
                mode: cfg.mode,
                seed: cfg.seed,
            },
            hss,
        )?),
        PolicyConfig::FastOnly => Box::new(FastOnly),
        PolicyConfig::SlowOnly => Box::new(SlowOnly),
        PolicyConfig::Random => Box::new(RandomPlace::new(cfg.seed)),
        PolicyConfig::Cde(p) => Box::new(Cde { params: *p }),
        PolicyConfig::Hps(p) => Box::new(Hps::new(*p)),
        PolicyConfig::Oracle => Box::new(Oracle::default()),
        PolicyConfig::TriHeuristic(p) => Box::new(TriHeuristic { params: *p }),
    })
}

/// One `metrics.csv` row. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub config_hash: String,
    pub seed: u64,
    pub grid_point: String,
    pub workload: String,
    pub policy: String,
    pub preset: String,
    pub fast_capacity_pages: u64,
    pub working_set_pages: u64,
    pub requests: usize,
    pub avg_latency_ns: f64,
    pub normalized_latency: f64,
    pub total_latency_ns: f64,
    pub iops: f64,
    pub eviction_ratio: f64,
    pub fast_evictions: u64,
    pub total_evictions: u64,
    pub fast_preference: f64,
    pub promotions: u64,
    pub background_ns: f64,
    pub explored_actions: u64,
    pub training_rounds: u64,
    pub final_loss: Option<f64>,
}

pub const CSV_COLUMNS: [&str; 22] = [
    "config_hash",
    "seed",
    "grid_point",
    "workload",
    "policy",
    "preset",
    "fast_capacity_pages",
    "working_set_pages",
    "requests",
    "avg_latency_ns",
    "normalized_latency",
    "total_latency_ns",
    "iops",
    "eviction_ratio",
    "fast_evictions",
    "total_evictions",
    "fast_preference",
    "promotions",
    "background_ns",
    "explored_actions",
    "training_rounds",
    "final_loss",
];

/// Everything produced for one (workload, policy) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub row: MetricsRow,
    pub report: MetricsReport,
    /// Little-endian half-precision weight checkpoint, agent runs only.
    #[serde(skip)]
    pub checkpoint: Option<Vec<u8>>,
}

fn row_for(
    cfg: &ExperimentConfig,
    hash: &str,
    grid_point: &str,
    tiers: &[DeviceProfile],
    working_set: u64,
    report: &MetricsReport,
    reference_avg: f64,
) -> MetricsRow {
    MetricsRow {
        config_hash: hash.to_string(),
        seed: cfg.seed,
        grid_point: grid_point.to_string(),
        workload: report.workload.clone(),
        policy: report.policy.clone(),
        preset: cfg.system.preset.label().to_string(),
        fast_capacity_pages: tiers[0].capacity_pages,
        working_set_pages: working_set,
        requests: report.requests,
        avg_latency_ns: report.avg_latency_ns,
        normalized_latency: if reference_avg > 0.0 {
            report.avg_latency_ns / reference_avg
        } else {
            1.0
        },
        total_latency_ns: report.total_latency_ns,
        iops: report.iops,
        eviction_ratio: report.eviction_ratio,
        fast_evictions: report.fast_evictions,
        total_evictions: report.total_evictions,
        fast_preference: report.fast_preference,
        promotions: report.promotions,
        background_ns: report.background_ns,
        explored_actions: report.explored_actions,
        training_rounds: report.training_rounds,
        final_loss: report.final_loss,
    }
}

fn run_one(
    policy: &mut dyn Policy,
    workload: &Workload,
    tiers: Vec<DeviceProfile>,
    opts: RunOptions,
) -> Result<MetricsReport, HarnessError> {
    let hss = HssState::new(tiers)?;
    run_policy(policy, &workload.requests, hss, &workload.name, opts, None).map_err(|source| HarnessError::Run {
        workload: workload.name.clone(),
        policy: policy.name(),
        source,
    })
}

/// Replays every workload with the configured policy and with Fast-Only.
/// Returns the Fast-Only record first for each workload unless the policy
/// is itself Fast-Only.
pub fn run_experiment(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    run_point(cfg, base_dir, "")
}

fn run_point(cfg: &ExperimentConfig, base_dir: &Path, grid_point: &str) -> Result<Vec<RunRecord>, HarnessError> {
    cfg.validate(base_dir)?;
    let hash = cfg.hash();
    let opts = RunOptions {
        phases: cfg.output.phases,
        check_invariants: false,
    };
    let mut out = Vec::new();
    for w in load_workloads(cfg, base_dir)? {
        let ws = working_set_pages(&w.requests) as u64;
        let tiers = build_tiers(&cfg.system, ws);
        let reference = run_one(&mut FastOnly, &w, fast_only_tiers(&tiers, ws), opts)?;
        let ref_avg = reference.avg_latency_ns;
        out.push(RunRecord {
            row: row_for(
                cfg,
                &hash,
                grid_point,
                &fast_only_tiers(&tiers, ws),
                ws,
                &reference,
                ref_avg,
            ),
            report: reference,
            checkpoint: None,
        });
        if matches!(cfg.policy, PolicyConfig::FastOnly) {
            continue;
        }
        let hss = HssState::new(tiers.clone())?;
        let run_err = |source| HarnessError::Run {
            workload: w.name.clone(),
            policy: cfg.policy.label().into(),
            source,
        };
        let mut policy = make_policy(cfg, &hss).map_err(run_err)?;
        let report = run_one(policy.as_mut(), &w, tiers.clone(), opts)?;
        let checkpoint = match (&cfg.policy, policy.network()) {
            (PolicyConfig::Agent { checkpoint: true, .. }, Some(net)) => {
                let mut bytes = Vec::new();
                write_checkpoint(&net, &mut bytes).map_err(|e| run_err(PolicyError::Rl(e)))?;
                Some(bytes)
            }
            _ => None,
        };
        out.push(RunRecord {
            row: row_for(cfg, &hash, grid_point, &tiers, ws, &report, ref_avg),
            report,
            checkpoint,
        });
    }
    Ok(out)
}

/// Runs every grid point, in parallel, in grid order.
pub fn sweep(cfg: &ExperimentConfig, grid: &GridSpec, base_dir: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let points = grid.points()?;
    let runs: Vec<Result<Vec<RunRecord>, HarnessError>> = points
        .par_iter()
        .map(|p| run_point(&p.apply(cfg), base_dir, &p.label()))
        .collect();
    let mut out = Vec::new();
    for r in runs {
        out.extend(r?);
    }
    Ok(out)
}

pub fn write_csv<W: std::io::Write>(rows: &[MetricsRow], w: W) -> Result<(), HarnessError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    if rows.is_empty() {
        wr.write_record(CSV_COLUMNS)?;
    }
    wr.flush().map_err(|e| HarnessError::io(Path::new("<csv>"), e))?;
    Ok(())
}

/// Resolves the output directory, honouring [`OUT_DIR_ENV`].
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => cfg.output.dir.clone(),
    }
}

/// Writes `<stem>.csv` and, if enabled, one JSON document per record.
/// Returns the written paths.
pub fn write_outputs(
    cfg: &ExperimentConfig,
    records: &[RunRecord],
    dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut written = Vec::new();
    let csv_path = dir.join(format!("{stem}.csv"));
    let file = std::fs::File::create(&csv_path).map_err(|e| HarnessError::io(&csv_path, e))?;
    let rows: Vec<MetricsRow> = records.iter().map(|r| r.row.clone()).collect();
    write_csv(&rows, file)?;
    written.push(csv_path);
    if cfg.output.json {
        for r in records {
            let mut name = format!("{}.{}", sanitize(&r.row.workload), sanitize(&r.row.policy));
            if !r.row.grid_point.is_empty() {
                name.push('.');
                name.push_str(&sanitize(&r.row.grid_point));
            }
            let path = dir.join(format!("{name}.json"));
            let doc = serde_json::json!({
                "config_hash": r.row.config_hash,
                "seed": r.row.seed,
                "grid_point": r.row.grid_point,
                "preset": r.row.preset,
                "normalized_latency": r.row.normalized_latency,
                "report": r.report,
            });
            let text = serde_json::to_string_pretty(&doc).expect("report serializes");
            std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
            written.push(path);
        }
    }
    for r in records {
        if let Some(bytes) = &r.checkpoint {
            let path = dir.join(format!("{}.agent.twck", sanitize(&r.row.workload)));
            std::fs::write(&path, bytes).map_err(|e| HarnessError::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '=' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[cfg(test)]
mod tests;
