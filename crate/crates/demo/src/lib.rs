//! Browser bindings: policy comparison, per-phase learning curve and the
//! categorical projection step. Every entry point takes plain values and
//! returns a JSON string; errors come back as `{"error": ...}`.

use std::path::Path;

use serde::Serialize;
use serde_json::json;
use tierwise::agent::ExecutionMode;
use tierwise::baselines::{CdeParams, HpsParams};
use tierwise::harness::{run_experiment, ExperimentConfig, HarnessError, PolicyConfig};
use tierwise::rlcore::{c51_project, Support};
use wasm_bindgen::prelude::*;

const COMPARED: [&str; 7] = ["agent", "fast_only", "slow_only", "random", "cde", "hps", "oracle"];

fn parse(config_toml: &str) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::from_toml(config_toml)?;
    // No threads in the browser.
    cfg.mode = ExecutionMode::Deterministic;
    cfg.validate(Path::new("."))?;
    Ok(cfg)
}

fn policy_named(name: &str, k_p: f64) -> PolicyConfig {
    match name {
        "agent" => PolicyConfig::Agent { k_p, checkpoint: false },
        "fast_only" => PolicyConfig::FastOnly,
        "slow_only" => PolicyConfig::SlowOnly,
        "random" => PolicyConfig::Random,
        "cde" => PolicyConfig::Cde(CdeParams::default()),
        "hps" => PolicyConfig::Hps(HpsParams::default()),
        _ => PolicyConfig::Oracle,
    }
}

#[derive(Serialize)]
struct Bar {
    policy: String,
    workload: String,
    avg_latency_ns: f64,
    normalized_latency: f64,
    fast_preference: f64,
    eviction_ratio: f64,
}

fn error_json(e: &HarnessError) -> String {
    e.to_json().to_string()
}

/// Run the config's workloads under each of the seven policies.
pub fn compare_policies_impl(config_toml: &str) -> Result<String, HarnessError> {
    let cfg = parse(config_toml)?;
    let k_p = match cfg.policy {
        PolicyConfig::Agent { k_p, .. } => k_p,
        _ => 0.001,
    };
    let mut bars = Vec::new();
    for name in COMPARED {
        let mut c = cfg.clone();
        c.policy = policy_named(name, k_p);
        for rec in run_experiment(&c, Path::new("."))? {
            if rec.row.policy != name {
                continue;
            }
            bars.push(Bar {
                policy: rec.row.policy,
                workload: rec.row.workload,
                avg_latency_ns: rec.row.avg_latency_ns,
                normalized_latency: rec.row.normalized_latency,
                fast_preference: rec.row.fast_preference,
                eviction_ratio: rec.row.eviction_ratio,
            });
        }
    }
    Ok(serde_json::to_string(&bars).unwrap_or_default())
}

/// Per-phase latency and fast-tier share for the configured policy.
pub fn learning_curve_impl(config_toml: &str) -> Result<String, HarnessError> {
    let cfg = parse(config_toml)?;
    let out: Vec<_> = run_experiment(&cfg, Path::new("."))?
        .into_iter()
        .filter(|r| r.row.policy == cfg.policy.label())
        .map(|r| {
            json!({
                "workload": r.row.workload,
                "policy": r.row.policy,
                "training_rounds": r.row.training_rounds,
                "phases": r.report.phases,
            })
        })
        .collect();
    Ok(serde_json::Value::from(out).to_string())
}

/// Project `r + gamma * z` onto the support. `next` holds the next-state
/// probabilities; an empty slice means a uniform distribution.
pub fn project_impl(r: f64, gamma: f64, n_atoms: usize, next: &[f64]) -> Result<String, String> {
    if !(2..=201).contains(&n_atoms) {
        return Err(format!("n_atoms must be in 2..=201, got {n_atoms}"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(format!("gamma must be in [0, 1), got {gamma}"));
    }
    let probs = if next.is_empty() {
        vec![1.0 / n_atoms as f64; n_atoms]
    } else if next.len() == n_atoms {
        let sum: f64 = next.iter().sum();
        if sum.is_nan() || sum <= 0.0 || next.iter().any(|p| *p < 0.0) {
            return Err("next distribution must be non-negative with positive mass".into());
        }
        next.iter().map(|p| p / sum).collect()
    } else {
        return Err(format!("next has {} entries, want {n_atoms}", next.len()));
    };
    let support = Support::for_unit_rewards(n_atoms, gamma);
    let projected = c51_project(r, &probs, gamma, &support);
    Ok(json!({
        "atoms": support.atoms(),
        "next": probs,
        "projected": projected,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn compare_policies(config_toml: &str) -> String {
    compare_policies_impl(config_toml).unwrap_or_else(|e| error_json(&e))
}

#[wasm_bindgen]
pub fn learning_curve(config_toml: &str) -> String {
    learning_curve_impl(config_toml).unwrap_or_else(|e| error_json(&e))
}

#[wasm_bindgen]
pub fn project(r: f64, gamma: f64, n_atoms: usize, next: Vec<f64>) -> String {
    project_impl(r, gamma, n_atoms, &next).unwrap_or_else(|e| json!({ "error": e }).to_string())
}
