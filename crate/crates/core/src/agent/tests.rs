use super::*;
use crate::hssenv::{DeviceProfile, HssPreset};
use crate::trace::{gen_synthetic, SizeDist, SyntheticSpec};

fn outcome(latency: f64, eviction: f64) -> ServiceOutcome {
    ServiceOutcome {
        latency_ns: latency,
        evicted: if eviction > 0.0 {
            vec![crate::hssenv::Eviction {
                page: 0,
                from: 0,
                to: 1,
            }]
        } else {
            Vec::new()
        },
        eviction_latency_ns: eviction,
        promoted: false,
        served_tier: 0,
    }
}

fn params() -> RewardParams {
    RewardParams {
        k_p: 0.001,
        l_fast_ref_ns: 1000.0,
        r_max: 1.0,
    }
}

#[test]
fn reward_examples() {
    assert_eq!(compute_reward(&outcome(1000.0, 0.0), &params()).to_f64(), 1.0);
    assert_eq!(compute_reward(&outcome(2000.0, 0.0), &params()).to_f64(), 0.5);
    assert_eq!(compute_reward(&outcome(1000.0, 1e6), &params()).to_f64(), 0.0);
    let r = compute_reward(&outcome(1000.0, 1e5), &params()).to_f64();
    assert!((r - 0.9).abs() < 1e-3, "{r}");
    assert_eq!(compute_reward(&outcome(500.0, 0.0), &params()).to_f64(), 1.0);
}

fn hot_cold(n: usize, seed: u64) -> Vec<StorageRequest> {
    gen_synthetic(&SyntheticSpec {
        n_requests: n,
        hot_page_count: 1,
        cold_page_count: 20,
        hot_access_fraction: 0.5,
        write_fraction: 0.3,
        request_size: SizeDist::Fixed { pages: 1 },
        seed,
    })
    .unwrap()
}

fn system() -> HssState {
    HssState::new(vec![DeviceProfile::high_end(1), DeviceProfile::low_end_hdd(21)]).unwrap()
}

fn cfg(seed: u64, mode: ExecutionMode) -> AgentConfig {
    AgentConfig {
        seed,
        mode,
        ..AgentConfig::default()
    }
}

#[test]
fn no_training_before_buffer_fills() {
    let hss = system();
    let mut agent = Agent::new(cfg(0, ExecutionMode::Deterministic), &hss).unwrap();
    let r = run_policy(&mut agent, &hot_cold(1000, 1), hss, "t", RunOptions::default(), None).unwrap();
    assert_eq!(r.training_rounds, 0);
    assert_eq!(agent.buffer_len(), 999);
}

#[test]
fn cadence_follows_completed_experiences() {
    for (n, rounds) in [(1001, 1), (2500, 2), (3000, 2), (3001, 3)] {
        let hss = system();
        let mut agent = Agent::new(cfg(0, ExecutionMode::Deterministic), &hss).unwrap();
        let r = run_policy(&mut agent, &hot_cold(n, 1), hss, "t", RunOptions::default(), None).unwrap();
        assert_eq!(r.training_rounds, rounds, "n = {n}");
        assert_eq!(r.weight_syncs, rounds);
    }
}

#[test]
fn experience_chain_is_intact() {
    let hss = system();
    let mut agent = Agent::new(cfg(3, ExecutionMode::Deterministic), &hss).unwrap();
    let mut states = Vec::new();
    let trace = hot_cold(1500, 2);
    let mut obs = |s: &StepRecord<'_>| states.push(s.decision.tier);
    run_policy(&mut agent, &trace, hss, "t", RunOptions::default(), Some(&mut obs)).unwrap();
    let exps = agent.experiences();
    assert_eq!(exps.len(), 1000);
    for w in exps.windows(2) {
        assert_eq!(w[0].next_state, w[1].state);
    }
    // Stored actions are the ones taken, in order.
    let taken: Vec<u8> = states[499..1499].iter().map(|&t| t as u8).collect();
    assert_eq!(exps.iter().map(|e| e.action).collect::<Vec<_>>(), taken);
    assert!(exps.iter().all(|e| (0.0..=1.0).contains(&e.reward.to_f64())));
}

#[test]
fn same_seed_same_actions() {
    let trace = hot_cold(3000, 4);
    let run = |seed| {
        let hss = system();
        let mut agent = Agent::new(
            AgentConfig {
                hyperparams: Hyperparams {
                    epsilon: 0.05,
                    ..Hyperparams::default()
                },
                ..cfg(seed, ExecutionMode::Deterministic)
            },
            &hss,
        )
        .unwrap();
        let mut actions = Vec::new();
        let mut obs = |s: &StepRecord<'_>| actions.push(s.decision.tier);
        run_policy(&mut agent, &trace, hss, "t", RunOptions::default(), Some(&mut obs)).unwrap();
        actions
    };
    assert_eq!(run(9), run(9));
    assert_ne!(run(9), run(10));
}

#[test]
fn exploration_rate_matches_epsilon() {
    let hss = system();
    let eps = 0.1;
    let mut agent = Agent::new(
        AgentConfig {
            hyperparams: Hyperparams {
                epsilon: eps,
                ..Hyperparams::default()
            },
            ..cfg(1, ExecutionMode::Deterministic)
        },
        &hss,
    )
    .unwrap();
    let n = 20_000;
    let r = run_policy(&mut agent, &hot_cold(n, 5), hss, "t", RunOptions::default(), None).unwrap();
    let sd = (eps * (1.0 - eps) / n as f64).sqrt();
    let rate = r.explored_actions as f64 / n as f64;
    assert!((rate - eps).abs() < 4.0 * sd, "rate {rate}");
}

#[test]
fn average_latency_recomputes() {
    let hss = system();
    let mut agent = Agent::new(cfg(2, ExecutionMode::Deterministic), &hss).unwrap();
    let mut lat = Vec::new();
    let mut obs = |s: &StepRecord<'_>| lat.push(s.outcome.latency_ns);
    let r = run_policy(
        &mut agent,
        &hot_cold(2000, 6),
        hss,
        "t",
        RunOptions::default(),
        Some(&mut obs),
    )
    .unwrap();
    let mut sum = 0.0;
    for l in &lat {
        sum += l;
    }
    assert!((r.avg_latency_ns - sum / lat.len() as f64).abs() < 1e-6 * r.avg_latency_ns);
    let phase_total: usize = r.phases.iter().map(|p| p.end - p.start).sum();
    assert_eq!(phase_total, 2000);
}

#[test]
fn two_threaded_mode_runs_every_round() {
    let hss = system();
    let mut agent = Agent::new(cfg(0, ExecutionMode::TwoThreaded), &hss).unwrap();
    let r = run_policy(&mut agent, &hot_cold(3001, 1), hss, "t", RunOptions::default(), None).unwrap();
    assert_eq!(r.training_rounds, 3);
    assert_eq!(r.weight_syncs, 3);
    assert!(r.final_loss.unwrap().is_finite());
}

#[test]
fn tri_tier_agent_uses_wider_state() {
    let tiers = HssPreset::TriHdd.build(21, &[5.0, 10.0]);
    let hss = HssState::new(tiers).unwrap();
    let mut agent = Agent::new(cfg(0, ExecutionMode::Deterministic), &hss).unwrap();
    assert_eq!(agent.layout().dims(), 7);
    let r = run_policy(&mut agent, &hot_cold(1200, 1), hss, "t", RunOptions::default(), None).unwrap();
    assert_eq!(r.placements.len(), 3);
    assert_eq!(r.training_rounds, 1);
}

#[test]
fn state_fits_memory_budget() {
    let hss = system();
    let agent = Agent::new(cfg(0, ExecutionMode::Deterministic), &hss).unwrap();
    assert!(agent.state_bytes() as f64 <= 124.4 * 1024.0, "{}", agent.state_bytes());
}
