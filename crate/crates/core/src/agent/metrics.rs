use serde::{Deserialize, Serialize};

use super::{Decision, Policy, PolicyError, PolicyStats};
use crate::hssenv::{HssState, ServiceOutcome};
use crate::trace::StorageRequest;

/// Everything the run loop knows about one served request.
#[derive(Debug, Clone)]
pub struct StepRecord<'a> {
    pub index: usize,
    pub request: &'a StorageRequest,
    pub decision: Decision,
    pub outcome: &'a ServiceOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMetrics {
    pub start: usize,
    pub end: usize,
    pub avg_latency_ns: f64,
    pub fast_preference: f64,
    pub fast_evictions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: String,
    pub workload: String,
    pub requests: usize,
    pub total_latency_ns: f64,
    pub avg_latency_ns: f64,
    /// Requests per second of simulated foreground service time.
    pub iops: f64,
    /// Evictions out of the fastest tier.
    pub fast_evictions: u64,
    pub total_evictions: u64,
    /// `fast_evictions / requests`.
    pub eviction_ratio: f64,
    /// Share of requests whose pages ended up in the fastest tier.
    pub fast_preference: f64,
    pub placements: Vec<u64>,
    pub promotions: u64,
    /// Eviction and migration time spent off the request path.
    pub background_ns: f64,
    pub explored_actions: u64,
    pub training_rounds: u64,
    pub weight_syncs: u64,
    pub final_loss: Option<f64>,
    pub phases: Vec<PhaseMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Number of equal-length phases in the breakdown.
    pub phases: usize,
    /// Check the storage bookkeeping after every request (slow).
    pub check_invariants: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            phases: 10,
            check_invariants: false,
        }
    }
}

#[derive(Default)]
struct PhaseAcc {
    latency: f64,
    fast: u64,
    n: u64,
    evictions: u64,
}

/// Replay `trace` through `policy` on `hss`.
pub fn run_policy(
    policy: &mut dyn Policy,
    trace: &[StorageRequest],
    mut hss: HssState,
    workload: &str,
    opts: RunOptions,
    mut observer: Option<&mut dyn FnMut(&StepRecord<'_>)>,
) -> Result<MetricsReport, PolicyError> {
    policy.prepare(trace, &mut hss)?;
    let n_tiers = hss.n_tiers();
    let n = trace.len();
    let n_phases = opts.phases.clamp(1, n.max(1));
    let phase_of = |i: usize| (i * n_phases) / n.max(1);
    let mut phases: Vec<PhaseAcc> = (0..n_phases).map(|_| PhaseAcc::default()).collect();

    let mut total = 0.0;
    let mut background = 0.0;
    let mut placements = vec![0u64; n_tiers];
    let mut promotions = 0;
    let mut explored = 0;
    let base: Vec<u64> = (0..n_tiers).map(|t| hss.evictions_from(t)).collect();

    for (i, req) in trace.iter().enumerate() {
        let decision = policy.decide(req, &hss)?;
        let outcome = hss.serve(req, decision.tier)?;
        background += outcome.eviction_latency_ns;
        background += policy.after_serve(req, &outcome, &mut hss)?;
        if opts.check_invariants {
            hss.check_invariants().map_err(PolicyError::Invariant)?;
        }

        total += outcome.latency_ns;
        placements[outcome.served_tier] += 1;
        promotions += u64::from(outcome.promoted);
        explored += u64::from(decision.explored);
        let fe = outcome.evicted.iter().filter(|e| e.from == 0).count() as u64;

        let ph = &mut phases[phase_of(i)];
        ph.latency += outcome.latency_ns;
        ph.fast += u64::from(outcome.served_tier == 0);
        ph.n += 1;
        ph.evictions += fe;

        if let Some(obs) = observer.as_mut() {
            obs(&StepRecord {
                index: i,
                request: req,
                decision,
                outcome: &outcome,
            });
        }
    }
    // Includes demotions a policy issues outside of serve.
    let evictions: Vec<u64> = (0..n_tiers).map(|t| hss.evictions_from(t) - base[t]).collect();
    let fast_evictions = evictions[0];
    let total_evictions: u64 = evictions.iter().sum();

    let stats: PolicyStats = policy.finish()?;
    let nf = n.max(1) as f64;
    let mut start = 0;
    let phases = phases
        .into_iter()
        .map(|p| {
            let m = PhaseMetrics {
                start,
                end: start + p.n as usize,
                avg_latency_ns: if p.n > 0 { p.latency / p.n as f64 } else { 0.0 },
                fast_preference: if p.n > 0 { p.fast as f64 / p.n as f64 } else { 0.0 },
                fast_evictions: p.evictions,
            };
            start += p.n as usize;
            m
        })
        .collect();

    Ok(MetricsReport {
        policy: policy.name(),
        workload: workload.to_string(),
        requests: n,
        total_latency_ns: total,
        avg_latency_ns: if n > 0 { total / nf } else { 0.0 },
        iops: if total > 0.0 { nf / (total * 1e-9) } else { 0.0 },
        fast_evictions,
        total_evictions,
        eviction_ratio: fast_evictions as f64 / nf,
        fast_preference: placements[0] as f64 / nf,
        placements,
        promotions,
        background_ns: background,
        explored_actions: explored,
        training_rounds: stats.training_rounds,
        weight_syncs: stats.weight_syncs,
        final_loss: stats.final_loss,
        phases,
    })
}
