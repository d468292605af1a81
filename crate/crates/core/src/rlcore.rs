//! Categorical DQN machinery: bias-free MLP, atom support, target projection,
//! cross-entropy training and weight checkpoints.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use half::f16;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{ObsLayout, ObservationVector};
use crate::replay::Experience;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("network shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),
    #[error("invalid hyper-parameters: {0}")]
    InvalidHyperparams(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("undecodable state {0:#x}")]
    BadState(u64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn swish_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub n_atoms: usize,
    pub v_min: f64,
    pub v_max: f64,
}

impl Support {
    pub fn new(n_atoms: usize, v_min: f64, v_max: f64) -> Self {
        assert!(n_atoms >= 1 && v_max >= v_min);
        Self { n_atoms, v_min, v_max }
    }

    /// `[0, 1 / (1 - gamma)]`, the return range of rewards in `[0, 1]`.
    pub fn for_unit_rewards(n_atoms: usize, gamma: f64) -> Self {
        Self::new(n_atoms, 0.0, 1.0 / (1.0 - gamma))
    }

    pub fn delta(&self) -> f64 {
        if self.n_atoms == 1 {
            0.0
        } else {
            (self.v_max - self.v_min) / (self.n_atoms - 1) as f64
        }
    }

    pub fn atom(&self, i: usize) -> f64 {
        self.v_min + i as f64 * self.delta()
    }

    pub fn atoms(&self) -> Vec<f64> {
        (0..self.n_atoms).map(|i| self.atom(i)).collect()
    }
}

/// Distribution of `r + gamma * Z` mapped back onto `support`.
pub fn c51_project(r: f64, next_probs: &[f64], gamma: f64, support: &Support) -> Vec<f64> {
    let n = support.n_atoms;
    debug_assert_eq!(next_probs.len(), n);
    let mut out = vec![0.0; n];
    if n == 1 {
        out[0] = 1.0;
        return out;
    }
    let dz = support.delta();
    for (j, &p) in next_probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let tz = (r + gamma * support.atom(j)).clamp(support.v_min, support.v_max);
        let b = ((tz - support.v_min) / dz).clamp(0.0, (n - 1) as f64);
        let l = b.floor() as usize;
        let u = b.ceil() as usize;
        if l == u {
            out[l] += p;
        } else {
            out[l] += p * (u as f64 - b);
            out[u] += p * (b - l as f64);
        }
    }
    out
}

/// Greedy index, ties going to the lowest (fastest) tier.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Returns the chosen tier and whether it came from exploration.
pub fn select_action(q: &[f64], epsilon: f64, rng: &mut impl Rng) -> (usize, bool) {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        (rng.gen_range(0..q.len()), true)
    } else {
        (argmax(q), false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub gamma: f64,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub n_batches: usize,
    pub buffer_capacity: usize,
    pub sync_interval: u64,
    pub n_atoms: usize,
    /// Defaults to 0.
    pub v_min: Option<f64>,
    /// Defaults to `1 / (1 - gamma)`.
    pub v_max: Option<f64>,
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
    pub init_seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            learning_rate: 1e-4,
            epsilon: 0.001,
            batch_size: 128,
            n_batches: 8,
            buffer_capacity: 1000,
            sync_interval: 1000,
            n_atoms: 51,
            v_min: None,
            v_max: None,
            hidden: vec![20, 30],
            optimizer: OptimizerKind::Sgd,
            init_seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::InvalidHyperparams(m.to_string()));
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.n_batches == 0 || self.buffer_capacity == 0 {
            return bad("batch_size, n_batches and buffer_capacity must be positive");
        }
        if self.sync_interval == 0 {
            return bad("sync_interval must be positive");
        }
        if self.n_atoms == 0 {
            return bad("n_atoms must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty and positive");
        }
        let s = self.support();
        if !(s.v_max >= s.v_min && s.v_min.is_finite() && s.v_max.is_finite()) {
            return bad("support must satisfy v_min <= v_max");
        }
        Ok(())
    }

    pub fn support(&self) -> Support {
        let v_min = self.v_min.unwrap_or(0.0);
        let v_max = self.v_max.unwrap_or(1.0 / (1.0 - self.gamma));
        Support {
            n_atoms: self.n_atoms,
            v_min,
            v_max,
        }
    }

    /// Layer widths from input to output.
    pub fn dims(&self, input: usize, n_actions: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(&self.hidden);
        d.push(n_actions * self.n_atoms);
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// Full-precision master weights.
    Master,
    /// Half-precision copies.
    Half,
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    rows: usize,
    cols: usize,
    master: Vec<f64>,
    half: Vec<f16>,
    /// `half` widened back to f64.
    quant: Vec<f64>,
}

impl Layer {
    fn refresh(&mut self) {
        for ((h, q), &m) in self.half.iter_mut().zip(&mut self.quant).zip(&self.master) {
            *h = f16::from_f64(m);
            *q = h.to_f64();
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Per-action probability vectors.
    pub probs: Vec<Vec<f64>>,
    pub q: Vec<f64>,
}

struct Trace {
    /// Layer inputs (post-activation), one per layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

/// Bias-free fully connected network with swish hidden units and a
/// per-action softmax over atoms.
#[derive(Debug)]
pub struct Network {
    dims: Vec<usize>,
    n_actions: usize,
    support: Support,
    layers: Vec<Layer>,
    macs: AtomicU64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Self {
            dims: self.dims.clone(),
            n_actions: self.n_actions,
            support: self.support,
            layers: self.layers.clone(),
            macs: AtomicU64::new(self.macs.load(Ordering::Relaxed)),
        }
    }
}

impl Network {
    /// Glorot-uniform initialisation.
    pub fn new(dims: &[usize], n_actions: usize, support: Support, seed: u64) -> Self {
        assert!(dims.len() >= 2);
        assert_eq!(*dims.last().unwrap(), n_actions * support.n_atoms);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (cols, rows) = (w[0], w[1]);
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                let master: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
                let mut l = Layer {
                    rows,
                    cols,
                    half: vec![f16::ZERO; master.len()],
                    quant: vec![0.0; master.len()],
                    master,
                };
                l.refresh();
                l
            })
            .collect();
        Self {
            dims: dims.to_vec(),
            n_actions,
            support,
            layers,
            macs: AtomicU64::new(0),
        }
    }

    pub fn from_hyperparams(hp: &Hyperparams, input: usize, n_actions: usize, seed: u64) -> Self {
        Self::new(&hp.dims(input, n_actions), n_actions, hp.support(), seed)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.master.len()).sum()
    }

    pub fn macs(&self) -> u64 {
        self.macs.load(Ordering::Relaxed)
    }

    pub fn reset_macs(&self) {
        self.macs.store(0, Ordering::Relaxed);
    }

    /// Half-precision weights, layer by layer, row-major.
    pub fn half_weights(&self) -> Vec<f16> {
        self.layers.iter().flat_map(|l| l.half.iter().copied()).collect()
    }

    pub fn master_weights(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.master.iter().copied()).collect()
    }

    /// Overwrite master weights (flattened, layer order) and refresh the copies.
    pub fn set_master_weights(&mut self, w: &[f64]) {
        assert_eq!(w.len(), self.weight_count());
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.master.len();
            l.master.copy_from_slice(&w[off..off + n]);
            l.refresh();
            off += n;
        }
    }

    /// Bytes for the half-precision copy plus, optionally, the masters.
    pub fn storage_bytes(&self, with_master: bool) -> usize {
        let n = self.weight_count();
        n * 2 + if with_master { n * 8 } else { 0 }
    }

    fn run(&self, x: &[f64], precision: Precision) -> Trace {
        assert_eq!(x.len(), self.dims[0], "input width");
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut cur = x.to_vec();
        let mut macs = 0u64;
        for (k, l) in self.layers.iter().enumerate() {
            let w = match precision {
                Precision::Master => &l.master,
                Precision::Half => &l.quant,
            };
            let z: Vec<f64> = w
                .chunks_exact(l.cols)
                .map(|row| row.iter().zip(&cur).map(|(a, b)| a * b).sum())
                .collect();
            macs += (l.rows * l.cols) as u64;
            inputs.push(std::mem::take(&mut cur));
            if k + 1 < self.layers.len() {
                cur = z.iter().map(|&v| swish(v)).collect();
                pre.push(z);
            } else {
                cur = z;
            }
        }
        self.macs.fetch_add(macs, Ordering::Relaxed);
        Trace {
            inputs,
            pre,
            logits: cur,
        }
    }

    fn head(&self, logits: &[f64]) -> ForwardOutput {
        let na = self.support.n_atoms;
        let mut probs = Vec::with_capacity(self.n_actions);
        let mut q = Vec::with_capacity(self.n_actions);
        for a in 0..self.n_actions {
            let g = &logits[a * na..(a + 1) * na];
            if na == 1 {
                // Expectation head: the single logit is the value itself.
                probs.push(vec![1.0]);
                q.push(g[0]);
                continue;
            }
            let p = softmax(g);
            q.push(p.iter().enumerate().map(|(i, pi)| pi * self.support.atom(i)).sum());
            probs.push(p);
        }
        ForwardOutput { probs, q }
    }

    pub fn forward(&self, x: &[f64], precision: Precision) -> ForwardOutput {
        let t = self.run(x, precision);
        self.head(&t.logits)
    }
}

fn softmax(g: &[f64]) -> Vec<f64> {
    let m = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = g.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_softmax(g: &[f64]) -> Vec<f64> {
    let m = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + g.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    g.iter().map(|v| v - lse).collect()
}

/// Copy the trainer's weights into `dst`.
pub fn sync_weights(src: &Network, dst: &mut Network) -> Result<(), RlError> {
    if src.dims != dst.dims || src.n_actions != dst.n_actions || src.support != dst.support {
        return Err(RlError::ShapeMismatch(src.dims.clone(), dst.dims.clone()));
    }
    for (d, s) in dst.layers.iter_mut().zip(&src.layers) {
        d.master.copy_from_slice(&s.master);
        d.half.copy_from_slice(&s.half);
        d.quant.copy_from_slice(&s.quant);
    }
    Ok(())
}

/// Network input for a packed state.
pub fn encode_state(state: u64, layout: ObsLayout) -> Result<Vec<f64>, RlError> {
    ObservationVector::unpack(state, layout)
        .map(|o| o.normalize(layout))
        .map_err(|_| RlError::BadState(state))
}

/// One training example after target construction.
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: Vec<f64>,
    pub action: usize,
    pub target: Vec<f64>,
}

/// Build the projected target for `e` from the frozen inference network.
pub fn make_sample(e: &Experience, inference: &Network, gamma: f64, layout: ObsLayout) -> Result<Sample, RlError> {
    let input = encode_state(e.state, layout)?;
    let next = encode_state(e.next_state, layout)?;
    let out = inference.forward(&next, Precision::Half);
    let a_star = argmax(&out.q);
    let target = if inference.support.n_atoms == 1 {
        vec![e.reward.to_f64() + gamma * out.q[a_star]]
    } else {
        c51_project(e.reward.to_f64(), &out.probs[a_star], gamma, &inference.support)
    };
    Ok(Sample {
        input,
        action: usize::from(e.action),
        target,
    })
}

/// Mean cross-entropy over `samples` and its gradient w.r.t. the master
/// weights, flattened in layer order.
pub fn loss_and_grad(net: &Network, samples: &[Sample]) -> (f64, Vec<f64>) {
    let na = net.support.n_atoms;
    let mut grads: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.master.len()]).collect();
    let mut loss = 0.0;
    for s in samples {
        let t = net.run(&s.input, Precision::Master);
        let lo = s.action * na;
        let g = &t.logits[lo..lo + na];
        let (ce, d_slice) = if na == 1 {
            // Squared error for the expectation head.
            let diff = g[0] - s.target[0];
            (0.5 * diff * diff, vec![diff])
        } else {
            let logp = log_softmax(g);
            let ce = -s.target.iter().zip(&logp).map(|(m, lp)| m * lp).sum::<f64>();
            let d = logp.iter().zip(&s.target).map(|(lp, m)| lp.exp() - m).collect();
            (ce, d)
        };
        loss += ce;
        let mut delta = vec![0.0; t.logits.len()];
        delta[lo..lo + na].copy_from_slice(&d_slice);
        for k in (0..net.layers.len()).rev() {
            let l = &net.layers[k];
            let input = &t.inputs[k];
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut grads[k][r * l.cols..(r + 1) * l.cols];
                for (gw, &x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            if k == 0 {
                break;
            }
            let mut back = vec![0.0; l.cols];
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (b, &w) in back.iter_mut().zip(&l.master[r * l.cols..(r + 1) * l.cols]) {
                    *b += d * w;
                }
            }
            delta = back
                .into_iter()
                .zip(&t.pre[k - 1])
                .map(|(b, &z)| b * swish_grad(z))
                .collect();
        }
    }
    let n = samples.len().max(1) as f64;
    let flat = grads.into_iter().flatten().map(|g| g / n).collect();
    (loss / n, flat)
}

/// Gradient-descent state for a training network.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, lr: f64, n_weights: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => (vec![0.0; n_weights], vec![0.0; n_weights]),
        };
        Self { kind, lr, m, v, t: 0 }
    }

    pub fn updates(&self) -> u64 {
        self.t
    }

    pub fn apply(&mut self, net: &mut Network, grad: &[f64]) {
        self.t += 1;
        let mut w = net.master_weights();
        match self.kind {
            OptimizerKind::Sgd => {
                for (wi, g) in w.iter_mut().zip(grad) {
                    *wi -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                let b1t = 1.0 - Self::BETA1.powi(self.t as i32);
                let b2t = 1.0 - Self::BETA2.powi(self.t as i32);
                for i in 0..w.len() {
                    self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
                    self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
                    let mh = self.m[i] / b1t;
                    let vh = self.v[i] / b2t;
                    w[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
                }
            }
        }
        net.set_master_weights(&w);
    }
}

/// One update per batch; returns the mean loss over batches.
pub fn train_step(
    training: &mut Network,
    inference: &Network,
    optimizer: &mut Optimizer,
    batches: &[Vec<Experience>],
    gamma: f64,
    layout: ObsLayout,
) -> Result<f64, RlError> {
    let mut total = 0.0;
    for batch in batches {
        let samples = batch
            .iter()
            .map(|e| make_sample(e, inference, gamma, layout))
            .collect::<Result<Vec<_>, _>>()?;
        let (loss, grad) = loss_and_grad(training, &samples);
        if !loss.is_finite() {
            return Err(RlError::NonFiniteLoss(loss));
        }
        optimizer.apply(training, &grad);
        total += loss;
    }
    Ok(total / batches.len().max(1) as f64)
}

const MAGIC: &[u8; 4] = b"TWCK";
const VERSION: u16 = 1;

/// Binary checkpoint: magic, version, layer widths, action count, support,
/// then half-precision weights row-major, all little-endian.
pub fn write_checkpoint<W: Write>(net: &Network, mut w: W) -> Result<(), RlError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(net.dims.len() as u16).to_le_bytes())?;
    for &d in &net.dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&(net.n_actions as u32).to_le_bytes())?;
    w.write_all(&(net.support.n_atoms as u32).to_le_bytes())?;
    w.write_all(&net.support.v_min.to_le_bytes())?;
    w.write_all(&net.support.v_max.to_le_bytes())?;
    for h in net.half_weights() {
        w.write_all(&h.to_bits().to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Network, RlError> {
    fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N], RlError> {
        let mut b = [0u8; N];
        r.read_exact(&mut b)
            .map_err(|e| RlError::BadCheckpoint(format!("truncated: {e}")))?;
        Ok(b)
    }
    if &take::<4>(&mut r)? != MAGIC {
        return Err(RlError::BadCheckpoint("bad magic".into()));
    }
    let version = u16::from_le_bytes(take(&mut r)?);
    if version != VERSION {
        return Err(RlError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let n_dims = u16::from_le_bytes(take(&mut r)?) as usize;
    if !(2..=16).contains(&n_dims) {
        return Err(RlError::BadCheckpoint(format!("{n_dims} layer widths")));
    }
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(u32::from_le_bytes(take(&mut r)?) as usize);
    }
    let n_actions = u32::from_le_bytes(take(&mut r)?) as usize;
    let n_atoms = u32::from_le_bytes(take(&mut r)?) as usize;
    let v_min = f64::from_le_bytes(take(&mut r)?);
    let v_max = f64::from_le_bytes(take(&mut r)?);
    if n_atoms == 0
        || n_actions * n_atoms != dims[n_dims - 1]
        || v_max.partial_cmp(&v_min).is_none_or(|o| o.is_lt())
        || dims.contains(&0)
    {
        return Err(RlError::BadCheckpoint("inconsistent header".into()));
    }
    let mut net = Network::new(&dims, n_actions, Support::new(n_atoms, v_min, v_max), 0);
    for l in &mut net.layers {
        for i in 0..l.master.len() {
            let h = f16::from_bits(u16::from_le_bytes(take(&mut r)?));
            l.half[i] = h;
            l.quant[i] = h.to_f64();
            l.master[i] = h.to_f64();
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(RlError::BadCheckpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_project(r: f64, p: &[f64], gamma: f64, s: &Support) -> Vec<f64> {
        // Each target atom collects mass via the triangular kernel around it.
        let z = s.atoms();
        let dz = s.delta();
        (0..s.n_atoms)
            .map(|i| {
                let mut m = 0.0;
                for j in 0..s.n_atoms {
                    let tz = (r + gamma * z[j]).max(s.v_min).min(s.v_max);
                    let w = 1.0 - (tz - z[i]).abs() / dz;
                    if w > 0.0 {
                        m += p[j] * w;
                    }
                }
                m
            })
            .collect()
    }

    #[test]
    fn swish_values() {
        assert_eq!(swish(0.0), 0.0);
        assert!((swish(10.0) - 10.0 / (1.0 + (-10.0f64).exp())).abs() < 1e-12);
        assert!((swish(10.0) - 9.99955).abs() < 1e-5);
        assert!((swish(-1.0) + 0.268_941_4).abs() < 1e-6);
    }

    #[test]
    fn swish_grad_matches_difference() {
        for x in [-5.0, -1.0, -0.1, 0.0, 0.3, 2.0, 8.0] {
            let h = 1e-6;
            let fd = (swish(x + h) - swish(x - h)) / (2.0 * h);
            assert!((fd - swish_grad(x)).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn projection_gamma_zero_collapses_on_reward() {
        let s = Support::new(11, 0.0, 10.0);
        let p = vec![1.0 / 11.0; 11];
        let m = c51_project(3.25, &p, 0.0, &s);
        assert!((m[3] - 0.75).abs() < 1e-12);
        assert!((m[4] - 0.25).abs() < 1e-12);
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_identity_transport() {
        let s = Support::new(11, 0.0, 10.0);
        let p: Vec<f64> = (1..=11).map(|i| i as f64 / 66.0).collect();
        let m = c51_project(0.0, &p, 1.0, &s);
        for (a, b) in m.iter().zip(&p) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn projection_matches_brute_force(
            r in 0.0f64..1.5,
            gamma in 0.0f64..0.999,
            raw in prop::collection::vec(0.0f64..1.0, 11),
        ) {
            let s = Support::new(11, 0.0, 10.0);
            let total: f64 = raw.iter().sum::<f64>() + 1e-9;
            let p: Vec<f64> = raw.iter().map(|v| (v + 1e-9 / 11.0) / total).collect();
            let fast = c51_project(r, &p, gamma, &s);
            let slow = brute_project(r, &p, gamma, &s);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-9);
                prop_assert!(*a >= 0.0);
            }
            prop_assert!((fast.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn greedy_choice_is_scale_invariant(q in prop::collection::vec(-5.0f64..5.0, 2..5), k in 0.01f64..100.0) {
            let scaled: Vec<f64> = q.iter().map(|v| v * k).collect();
            prop_assert_eq!(argmax(&q), argmax(&scaled));
        }

        #[test]
        fn heads_are_simplex(x in prop::collection::vec(0.0f64..=1.0, 6), seed in 0u64..100) {
            let net = Network::new(&[6, 20, 30, 2 * 51], 2, Support::new(51, 0.0, 10.0), seed);
            for prec in [Precision::Master, Precision::Half] {
                let out = net.forward(&x, prec);
                for p in &out.probs {
                    prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                    prop_assert!(p.iter().all(|v| *v >= 0.0));
                }
                prop_assert!(out.q.iter().all(|q| q.is_finite()));
            }
        }
    }

    #[test]
    fn zero_weights_give_uniform_heads() {
        let mut net = Network::new(&[6, 20, 30, 2 * 11], 2, Support::new(11, 0.0, 10.0), 1);
        net.set_master_weights(&vec![0.0; net.weight_count()]);
        let out = net.forward(&[0.5; 6], Precision::Half);
        for (p, q) in out.probs.iter().zip(&out.q) {
            assert!(p.iter().all(|v| (v - 1.0 / 11.0).abs() < 1e-12));
            assert!((q - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mac_counts() {
        let net = Network::new(&[6, 20, 30, 2], 2, Support::new(1, 0.0, 10.0), 0);
        assert_eq!(net.weight_count(), 780);
        net.forward(&[0.0; 6], Precision::Half);
        assert_eq!(net.macs(), 780);
        let full = Network::new(&[6, 20, 30, 2 * 51], 2, Support::new(51, 0.0, 10.0), 0);
        assert_eq!(full.weight_count(), 6 * 20 + 20 * 30 + 30 * 102);
    }

    #[test]
    fn epsilon_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&[0.2, 0.7], 0.0, &mut rng), (1, false));
        assert_eq!(select_action(&[0.5, 0.5], 0.0, &mut rng), (0, false));
        let mut counts = [0u32; 2];
        for _ in 0..10_000 {
            let (a, explored) = select_action(&[0.0, 1.0], 1.0, &mut rng);
            assert!(explored);
            counts[a] += 1;
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 5000.0).powi(2) / 5000.0).sum();
        assert!(chi2 < 6.63, "chi2 = {chi2}");
    }

    fn toy_samples(net: &Network, n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = net.support;
        (0..n)
            .map(|_| {
                let input: Vec<f64> = (0..net.dims[0]).map(|_| rng.gen_range(0.0..=1.0)).collect();
                let next: Vec<f64> = {
                    let raw: Vec<f64> = (0..s.n_atoms).map(|_| rng.gen_range(0.01..1.0)).collect();
                    let t: f64 = raw.iter().sum();
                    raw.into_iter().map(|v| v / t).collect()
                };
                Sample {
                    input,
                    action: rng.gen_range(0..net.n_actions),
                    target: c51_project(rng.gen_range(0.0..1.0), &next, 0.9, &s),
                }
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut net = Network::new(&[6, 20, 30, 2 * 51], 2, Support::new(51, 0.0, 10.0), 3);
        let samples = toy_samples(&net, 5, 9);
        let (_, grad) = loss_and_grad(&net, &samples);
        let w0 = net.master_weights();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..w0.len() {
            let mut w = w0.clone();
            w[i] += h;
            net.set_master_weights(&w);
            let lp = loss_and_grad(&net, &samples).0;
            w[i] -= 2.0 * h;
            net.set_master_weights(&w);
            let lm = loss_and_grad(&net, &samples).0;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-3, "max relative error {worst}");
    }

    #[test]
    fn two_sgd_steps_decrease_loss() {
        let mut net = Network::new(&[6, 20, 30, 2 * 51], 2, Support::new(51, 0.0, 10.0), 5);
        let samples = toy_samples(&net, 128, 1);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 1e-4, net.weight_count());
        let mut losses = vec![loss_and_grad(&net, &samples).0];
        for _ in 0..2 {
            let (_, g) = loss_and_grad(&net, &samples);
            opt.apply(&mut net, &g);
            losses.push(loss_and_grad(&net, &samples).0);
        }
        assert!(losses[1] < losses[0] && losses[2] < losses[1], "{losses:?}");
    }

    #[test]
    fn sync_copies_half_weights() {
        let s = Support::new(51, 0.0, 10.0);
        let a = Network::new(&[6, 20, 30, 102], 2, s, 1);
        let mut b = Network::new(&[6, 20, 30, 102], 2, s, 2);
        let x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        assert_ne!(a.forward(&x, Precision::Half).q, b.forward(&x, Precision::Half).q);
        sync_weights(&a, &mut b).unwrap();
        assert_eq!(
            a.half_weights().iter().map(|h| h.to_bits()).collect::<Vec<_>>(),
            b.half_weights().iter().map(|h| h.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a.forward(&x, Precision::Half).q, b.forward(&x, Precision::Half).q);
        let mut c = Network::new(&[7, 20, 30, 153], 3, s, 2);
        assert!(matches!(sync_weights(&a, &mut c), Err(RlError::ShapeMismatch(..))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Network::new(&[7, 20, 30, 153], 3, Support::new(51, 0.0, 10.0), 4);
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 2 + 2 + 4 * 4 + 4 + 4 + 8 + 8 + 2 * net.weight_count());
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.dims(), net.dims());
        assert_eq!(back.half_weights(), net.half_weights());
        let x = [0.3; 7];
        assert_eq!(back.forward(&x, Precision::Half).q, net.forward(&x, Precision::Half).q);
        buf[0] = b'X';
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }

    #[test]
    fn hyperparam_validation() {
        assert!(Hyperparams::default().validate().is_ok());
        assert!((Hyperparams::default().support().v_max - 10.0).abs() < 1e-12);
        let bad = Hyperparams {
            gamma: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = Hyperparams {
            epsilon: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
