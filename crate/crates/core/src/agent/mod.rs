//! The online placement agent and the policy interface it shares with the
//! baselines.

mod metrics;

use std::collections::HashMap;
use std::sync::mpsc;
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use half::f16;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{run_policy, MetricsReport, PhaseMetrics, RunOptions, StepRecord};

use crate::features::{observe, ObsLayout};
use crate::hssenv::{device_latency, HssError, HssState, ServiceOutcome, TierId};
use crate::replay::{Experience, ExperienceBuffer, ReplayError};
use crate::rlcore::{
    encode_state, select_action, sync_weights, train_step, Hyperparams, Network, Optimizer, Precision, RlError,
};
use crate::trace::{Op, StorageRequest};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Hss(#[from] HssError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("storage invariant broken: {0}")]
    Invariant(String),
    #[error("training thread failed: {0}")]
    Worker(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub tier: TierId,
    pub explored: bool,
}

impl Decision {
    pub fn greedy(tier: TierId) -> Self {
        Self { tier, explored: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub training_rounds: u64,
    pub weight_syncs: u64,
    pub final_loss: Option<f64>,
    pub losses: Vec<f64>,
}

/// A placement policy driven by [`run_policy`].
pub trait Policy {
    fn name(&self) -> String;

    /// Called once with the whole trace before the first request.
    fn prepare(&mut self, _trace: &[StorageRequest], _hss: &mut HssState) -> Result<(), PolicyError> {
        Ok(())
    }

    fn decide(&mut self, req: &StorageRequest, hss: &HssState) -> Result<Decision, PolicyError>;

    /// Hook after the request is served. Returns background time spent on
    /// policy-initiated migrations.
    fn after_serve(
        &mut self,
        _req: &StorageRequest,
        _outcome: &ServiceOutcome,
        _hss: &mut HssState,
    ) -> Result<f64, PolicyError> {
        Ok(0.0)
    }

    fn finish(&mut self) -> Result<PolicyStats, PolicyError> {
        Ok(PolicyStats::default())
    }

    /// Current decision network, for learned policies.
    fn network(&self) -> Option<Network> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Eviction penalty coefficient.
    pub k_p: f64,
    /// Latency that maps to a reward of 1.
    pub l_fast_ref_ns: f64,
    /// Upper clamp, the largest per-step reward the return support can hold.
    pub r_max: f64,
}

impl RewardParams {
    pub fn for_system(hss: &HssState, k_p: f64, hp: &Hyperparams) -> Self {
        let s = hp.support();
        Self {
            k_p,
            l_fast_ref_ns: device_latency(&hss.tiers()[0], Op::Read, 1, true),
            r_max: s.v_max * (1.0 - hp.gamma),
        }
    }
}

pub fn compute_reward(outcome: &ServiceOutcome, params: &RewardParams) -> f16 {
    let r_hat = params.l_fast_ref_ns / outcome.latency_ns;
    let r = if outcome.had_eviction() {
        (r_hat - params.k_p * outcome.eviction_latency_ns / params.l_fast_ref_ns).max(0.0)
    } else {
        r_hat
    };
    f16::from_f64(r.clamp(0.0, params.r_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    /// Training runs inline at the cadence points.
    #[default]
    Deterministic,
    /// Training runs on its own thread while decisions continue.
    TwoThreaded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub hyperparams: Hyperparams,
    pub k_p: f64,
    pub mode: ExecutionMode,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hyperparams: Hyperparams::default(),
            k_p: 0.001,
            mode: ExecutionMode::Deterministic,
            seed: 0,
        }
    }
}

/// Owns the training network and performs rounds of replay training.
struct Learner {
    net: Network,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    hp: Hyperparams,
    layout: ObsLayout,
}

impl Learner {
    fn round(&mut self, buffer: &ExperienceBuffer, inference: &Network) -> Result<f64, PolicyError> {
        let batches = buffer.sample_batches(self.hp.n_batches, self.hp.batch_size, &mut self.rng)?;
        Ok(train_step(
            &mut self.net,
            inference,
            &mut self.optimizer,
            &batches,
            self.hp.gamma,
            self.layout,
        )?)
    }
}

enum Trainer {
    Inline(Box<Learner>),
    Thread {
        tx: Option<mpsc::Sender<()>>,
        handle: Option<JoinHandle<Result<PolicyStats, PolicyError>>>,
    },
    Finished,
}

struct Pending {
    state: u64,
    action: u8,
    reward: f16,
}

pub struct Agent {
    cfg: AgentConfig,
    layout: ObsLayout,
    reward: RewardParams,
    inference: Arc<RwLock<Network>>,
    buffer: Arc<Mutex<ExperienceBuffer>>,
    trainer: Trainer,
    rng: ChaCha8Rng,
    pending: HashMap<u16, Pending>,
    current: Option<(u64, u8)>,
    pushes_since_round: u64,
    stats: PolicyStats,
}

impl Agent {
    pub fn new(cfg: AgentConfig, hss: &HssState) -> Result<Self, PolicyError> {
        let hp = &cfg.hyperparams;
        hp.validate()?;
        let n_tiers = hss.n_tiers();
        if n_tiers > 1 << crate::replay::ACTION_BITS {
            return Err(PolicyError::Config(format!("{n_tiers} tiers exceed the action field")));
        }
        let layout = ObsLayout::new(n_tiers);
        let init = hp.init_seed ^ cfg.seed.rotate_left(17);
        let training = Network::from_hyperparams(hp, layout.dims(), n_tiers, init);
        let inference = Network::from_hyperparams(hp, layout.dims(), n_tiers, init.wrapping_add(1));
        let buffer = ExperienceBuffer::new(hp.buffer_capacity, layout.packed_bits())?;
        let learner = Learner {
            optimizer: Optimizer::new(hp.optimizer, hp.learning_rate, training.weight_count()),
            net: training,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x5eed),
            hp: hp.clone(),
            layout,
        };
        let inference = Arc::new(RwLock::new(inference));
        let buffer = Arc::new(Mutex::new(buffer));
        let trainer = match cfg.mode {
            ExecutionMode::Deterministic => Trainer::Inline(Box::new(learner)),
            ExecutionMode::TwoThreaded => spawn_trainer(learner, Arc::clone(&buffer), Arc::clone(&inference)),
        };
        Ok(Self {
            reward: RewardParams::for_system(hss, cfg.k_p, hp),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            layout,
            inference,
            buffer,
            trainer,
            pending: HashMap::new(),
            current: None,
            pushes_since_round: 0,
            stats: PolicyStats::default(),
        })
    }

    pub fn reward_params(&self) -> RewardParams {
        self.reward
    }

    pub fn layout(&self) -> ObsLayout {
        self.layout
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.lock().expect("buffer lock").len()
    }

    /// Snapshot of the experiences stored so far, oldest first.
    pub fn experiences(&self) -> Vec<Experience> {
        self.buffer.lock().expect("buffer lock").iter_fifo().collect()
    }

    pub fn inference_network(&self) -> Network {
        self.inference.read().expect("inference lock").clone()
    }

    /// Bytes of learned state: training net (half and master copies),
    /// inference net (half copy) and the experience ring.
    pub fn state_bytes(&self) -> usize {
        let inf = self.inference.read().expect("inference lock");
        inf.storage_bytes(true) + inf.storage_bytes(false) + self.buffer.lock().expect("buffer lock").storage_bytes()
    }

    fn complete_pending(&mut self, workload: u16, next_state: u64) -> Result<(), PolicyError> {
        let Some(p) = self.pending.remove(&workload) else {
            return Ok(());
        };
        let full = {
            let mut buf = self.buffer.lock().expect("buffer lock");
            buf.push(Experience {
                state: p.state,
                action: p.action,
                reward: p.reward,
                next_state,
            })?;
            buf.is_full()
        };
        self.pushes_since_round += 1;
        if full && self.pushes_since_round >= self.cfg.hyperparams.sync_interval {
            self.pushes_since_round = 0;
            self.training_round()?;
        }
        Ok(())
    }

    fn training_round(&mut self) -> Result<(), PolicyError> {
        match &mut self.trainer {
            Trainer::Inline(learner) => {
                let buf = self.buffer.lock().expect("buffer lock");
                let mut inf = self.inference.write().expect("inference lock");
                let loss = learner.round(&buf, &inf)?;
                sync_weights(&learner.net, &mut inf)?;
                self.stats.training_rounds += 1;
                self.stats.weight_syncs += 1;
                self.stats.final_loss = Some(loss);
                self.stats.losses.push(loss);
            }
            Trainer::Thread { tx, .. } => {
                let sent = tx.as_ref().map(|t| t.send(()).is_ok()).unwrap_or(false);
                if !sent {
                    return self
                        .join_trainer()
                        .and(Err(PolicyError::Worker("training thread stopped".into())));
                }
            }
            Trainer::Finished => return Err(PolicyError::Worker("agent already finished".into())),
        }
        Ok(())
    }

    fn join_trainer(&mut self) -> Result<(), PolicyError> {
        if let Trainer::Thread { tx, handle } = &mut self.trainer {
            drop(tx.take());
            if let Some(h) = handle.take() {
                let stats = h
                    .join()
                    .map_err(|_| PolicyError::Worker("training thread panicked".into()))??;
                self.stats = stats;
            }
        }
        Ok(())
    }
}

fn spawn_trainer(
    mut learner: Learner,
    buffer: Arc<Mutex<ExperienceBuffer>>,
    inference: Arc<RwLock<Network>>,
) -> Trainer {
    let (tx, rx) = mpsc::channel::<()>();
    let handle = std::thread::spawn(move || {
        let mut stats = PolicyStats::default();
        for () in rx {
            let snapshot = buffer.lock().expect("buffer lock").clone();
            let frozen = inference.read().expect("inference lock").clone();
            let loss = learner.round(&snapshot, &frozen)?;
            {
                let mut inf = inference.write().expect("inference lock");
                sync_weights(&learner.net, &mut inf)?;
            }
            stats.training_rounds += 1;
            stats.weight_syncs += 1;
            stats.final_loss = Some(loss);
            stats.losses.push(loss);
        }
        Ok(stats)
    });
    Trainer::Thread {
        tx: Some(tx),
        handle: Some(handle),
    }
}

impl Policy for Agent {
    fn name(&self) -> String {
        "agent".into()
    }

    fn decide(&mut self, req: &StorageRequest, hss: &HssState) -> Result<Decision, PolicyError> {
        let obs = observe(&hss.snapshot_features(req));
        let state = obs.pack(self.layout).map_err(|e| PolicyError::Config(e.to_string()))?;
        self.complete_pending(req.workload_id, state)?;
        let x = encode_state(state, self.layout)?;
        let q = self
            .inference
            .read()
            .expect("inference lock")
            .forward(&x, Precision::Half)
            .q;
        let (tier, explored) = select_action(&q, self.cfg.hyperparams.epsilon, &mut self.rng);
        self.current = Some((state, tier as u8));
        Ok(Decision { tier, explored })
    }

    fn after_serve(
        &mut self,
        req: &StorageRequest,
        outcome: &ServiceOutcome,
        _hss: &mut HssState,
    ) -> Result<f64, PolicyError> {
        let (state, action) = self
            .current
            .take()
            .ok_or_else(|| PolicyError::Config("after_serve without decide".into()))?;
        self.pending.insert(
            req.workload_id,
            Pending {
                state,
                action,
                reward: compute_reward(outcome, &self.reward),
            },
        );
        Ok(0.0)
    }

    fn finish(&mut self) -> Result<PolicyStats, PolicyError> {
        self.join_trainer()?;
        self.trainer = Trainer::Finished;
        self.pending.clear();
        Ok(self.stats.clone())
    }

    fn network(&self) -> Option<Network> {
        Some(self.inference_network())
    }
}

impl Drop for Agent {
    fn drop(&mut self) {
        let _ = self.join_trainer();
    }
}

#[cfg(test)]
mod tests;
