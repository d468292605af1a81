use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::agent::ExecutionMode;
use crate::baselines::{CdeParams, HpsParams};
use crate::hssenv::HssPreset;
use crate::rlcore::Hyperparams;
use crate::trace::{AnalogProfile, SizeDist};

pub const CONFIG_VERSION: u32 = 1;

/// One experiment: traces, a storage system, a policy and its knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: ExecutionMode,
    pub traces: Vec<TraceSource>,
    /// Merge all traces into one workload instead of running them one by one.
    #[serde(default)]
    pub mix: Option<MixConfig>,
    pub system: SystemConfig,
    pub policy: PolicyConfig,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceSource {
    /// MSRC CSV file; relative paths resolve against the config file.
    Msrc {
        path: PathBuf,
        #[serde(default)]
        name: Option<String>,
        /// Keep only the first `limit` requests.
        #[serde(default)]
        limit: Option<usize>,
    },
    Synthetic {
        #[serde(default)]
        name: Option<String>,
        n_requests: usize,
        hot_page_count: u64,
        cold_page_count: u64,
        hot_access_fraction: f64,
        write_fraction: f64,
        #[serde(default)]
        request_size: SizeDist,
        /// Defaults to the experiment seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Generated stand-in for one of the MSRC workloads.
    Analog {
        profile: String,
        #[serde(default)]
        n_requests: Option<usize>,
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixConfig {
    #[serde(default = "default_mix_name")]
    pub name: String,
    pub offsets_ns: Vec<u64>,
}

fn default_mix_name() -> String {
    "mix".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub preset: HssPreset,
    /// Upper-tier capacities as a percentage of the working set.
    #[serde(default)]
    pub capacity_pct: Option<Vec<f64>>,
    /// Upper-tier capacities in pages.
    #[serde(default)]
    pub capacity_pages: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum PolicyConfig {
    Agent {
        #[serde(default = "default_k_p")]
        k_p: f64,
        /// Write the final weights next to the metrics.
        #[serde(default)]
        checkpoint: bool,
    },
    FastOnly,
    SlowOnly,
    Random,
    Cde(CdeParams),
    Hps(HpsParams),
    Oracle,
    TriHeuristic(CdeParams),
}

fn default_k_p() -> f64 {
    0.001
}

impl PolicyConfig {
    pub fn label(&self) -> &'static str {
        match self {
            PolicyConfig::Agent { .. } => "agent",
            PolicyConfig::FastOnly => "fast_only",
            PolicyConfig::SlowOnly => "slow_only",
            PolicyConfig::Random => "random",
            PolicyConfig::Cde(_) => "cde",
            PolicyConfig::Hps(_) => "hps",
            PolicyConfig::Oracle => "oracle",
            PolicyConfig::TriHeuristic(_) => "tri_heuristic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative to the working directory; `TIERWISE_OUT_DIR` overrides it.
    pub dir: PathBuf,
    pub json: bool,
    pub phases: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            json: true,
            phases: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config {
            field: e.span().map(|s| span_path(text, s.start)).unwrap_or_default(),
            message: e.message().to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Checks everything that can be checked without running. Relative trace
    /// paths resolve against `base_dir`.
    pub fn validate(&self, base_dir: &Path) -> Result<(), HarnessError> {
        let invalid = |field: String, message: &str| {
            Err(HarnessError::Config {
                field,
                message: message.to_string(),
            })
        };
        if self.version != CONFIG_VERSION {
            return invalid(
                "version".into(),
                &format!("unsupported version, expected {CONFIG_VERSION}"),
            );
        }
        if self.traces.is_empty() {
            return invalid("traces".into(), "at least one trace is required");
        }
        for (i, t) in self.traces.iter().enumerate() {
            match t {
                TraceSource::Msrc { path, limit, .. } => {
                    if !base_dir.join(path).is_file() {
                        return invalid(
                            format!("traces[{i}].path"),
                            &format!("no such file: {}", path.display()),
                        );
                    }
                    if *limit == Some(0) {
                        return invalid(format!("traces[{i}].limit"), "must be positive");
                    }
                }
                TraceSource::Synthetic {
                    n_requests,
                    hot_access_fraction,
                    write_fraction,
                    ..
                } => {
                    if *n_requests == 0 {
                        return invalid(format!("traces[{i}].n_requests"), "must be positive");
                    }
                    for (name, f) in [
                        ("hot_access_fraction", hot_access_fraction),
                        ("write_fraction", write_fraction),
                    ] {
                        if !(0.0..=1.0).contains(f) {
                            return invalid(format!("traces[{i}].{name}"), "must lie in [0, 1]");
                        }
                    }
                }
                TraceSource::Analog {
                    profile, n_requests, ..
                } => {
                    if AnalogProfile::by_name(profile).is_none() {
                        return invalid(format!("traces[{i}].profile"), &format!("unknown workload `{profile}`"));
                    }
                    if *n_requests == Some(0) {
                        return invalid(format!("traces[{i}].n_requests"), "must be positive");
                    }
                }
            }
        }
        if let Some(mix) = &self.mix {
            if mix.offsets_ns.len() != self.traces.len() {
                return invalid("mix.offsets_ns".into(), "needs one offset per trace");
            }
        }
        let uppers = self.system.preset.device_names().len() - 1;
        match (&self.system.capacity_pct, &self.system.capacity_pages) {
            (Some(_), Some(_)) => {
                return invalid("system".into(), "set capacity_pct or capacity_pages, not both");
            }
            (Some(pct), None) => {
                if pct.len() != uppers {
                    return invalid("system.capacity_pct".into(), &format!("expected {uppers} entries"));
                }
                for (i, p) in pct.iter().enumerate() {
                    if !(*p > 0.0 && *p <= 100.0) {
                        return invalid(format!("system.capacity_pct[{i}]"), "must lie in (0, 100]");
                    }
                }
            }
            (None, Some(pages)) => {
                if pages.len() != uppers {
                    return invalid("system.capacity_pages".into(), &format!("expected {uppers} entries"));
                }
                if let Some(i) = pages.iter().position(|&p| p == 0) {
                    return invalid(format!("system.capacity_pages[{i}]"), "must be positive");
                }
            }
            (None, None) => {}
        }
        if matches!(self.policy, PolicyConfig::TriHeuristic(_)) && uppers != 2 {
            return invalid("policy.name".into(), "tri_heuristic needs a three-tier preset");
        }
        if let PolicyConfig::Agent { k_p, .. } = self.policy {
            if !(k_p >= 0.0 && k_p.is_finite()) {
                return invalid("policy.k_p".into(), "must be non-negative");
            }
        }
        if let Err(e) = self.hyperparams.validate() {
            return invalid("hyperparams".into(), &e.to_string());
        }
        if self.output.phases == 0 {
            return invalid("output.phases".into(), "must be positive");
        }
        Ok(())
    }

    /// Short SHA-256 digest of the canonical form, defaults filled in.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..8])
    }
}

/// Dotted key path of the table entry enclosing byte `offset`.
fn span_path(text: &str, offset: usize) -> String {
    let mut table = String::new();
    let mut key = String::new();
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        if t.starts_with('[') {
            table = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key.clear();
        } else if let Some((k, _)) = t.split_once('=') {
            key = k.trim().to_string();
        }
        pos += line.len();
        if pos > offset {
            break;
        }
    }
    match (table.is_empty(), key.is_empty()) {
        (true, _) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}

/// Parameter grid for `sweep`. Absent axes keep the config's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub gamma: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub fast_capacity_pct: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub seed: Vec<u64>,
}

/// One cell of the cross product.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub gamma: Option<f64>,
    pub learning_rate: Option<f64>,
    pub epsilon: Option<f64>,
    pub fast_capacity_pct: Option<f64>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
}

impl GridSpec {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config {
            field: e.span().map(|s| span_path(text, s.start)).unwrap_or_default(),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
            && self.learning_rate.is_empty()
            && self.epsilon.is_empty()
            && self.fast_capacity_pct.is_empty()
            && self.batch_size.is_empty()
            && self.seed.is_empty()
    }

    /// Cross product in field order, last axis varying fastest.
    pub fn points(&self) -> Result<Vec<GridPoint>, HarnessError> {
        if self.is_empty() {
            return Err(HarnessError::EmptyGrid);
        }
        fn axis<T: Copy>(v: &[T]) -> Vec<Option<T>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().copied().map(Some).collect()
            }
        }
        let mut out = Vec::new();
        for gamma in axis(&self.gamma) {
            for learning_rate in axis(&self.learning_rate) {
                for epsilon in axis(&self.epsilon) {
                    for fast_capacity_pct in axis(&self.fast_capacity_pct) {
                        for batch_size in axis(&self.batch_size) {
                            for seed in axis(&self.seed) {
                                out.push(GridPoint {
                                    gamma,
                                    learning_rate,
                                    epsilon,
                                    fast_capacity_pct,
                                    batch_size,
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

impl GridPoint {
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if let Some(v) = self.gamma {
            parts.push(format!("gamma={v}"));
        }
        if let Some(v) = self.learning_rate {
            parts.push(format!("learning_rate={v}"));
        }
        if let Some(v) = self.epsilon {
            parts.push(format!("epsilon={v}"));
        }
        if let Some(v) = self.fast_capacity_pct {
            parts.push(format!("fast_capacity_pct={v}"));
        }
        if let Some(v) = self.batch_size {
            parts.push(format!("batch_size={v}"));
        }
        if let Some(v) = self.seed {
            parts.push(format!("seed={v}"));
        }
        parts.join(";")
    }

    pub fn apply(&self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut c = cfg.clone();
        if let Some(v) = self.gamma {
            c.hyperparams.gamma = v;
        }
        if let Some(v) = self.learning_rate {
            c.hyperparams.learning_rate = v;
        }
        if let Some(v) = self.epsilon {
            c.hyperparams.epsilon = v;
        }
        if let Some(v) = self.batch_size {
            c.hyperparams.batch_size = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.fast_capacity_pct {
            let names = c.system.preset.device_names().len();
            let mut pct = c
                .system
                .capacity_pct
                .take()
                .unwrap_or_else(|| c.system.preset.default_upper_pct().to_vec());
            pct.resize(names - 1, 10.0);
            pct[0] = v;
            c.system.capacity_pct = Some(pct);
            c.system.capacity_pages = None;
        }
        c
    }
}
