//! Fixed-capacity experience ring with compact records.
//!
//! Each record packs `state | action | reward | next_state` little-endian
//! into `ceil((2 * state_bits + 20) / 8)` bytes: 13 bytes for 40-bit states,
//! 15 for 48-bit ones. The byte count always leaves four spare bits, and the
//! lowest of them marks a *chained* record whose next state is not stored
//! because it equals the state of the record pushed right after it.

use half::f16;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CAPACITY: usize = 1000;
pub const ACTION_BITS: u32 = 4;
pub const REWARD_BITS: u32 = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("buffer holds {fill} of {capacity} records; sampling needs a full buffer")]
    NotFull { fill: usize, capacity: usize },
    #[error("state {0:#x} does not fit the record's state field")]
    StateTooWide(u64),
    #[error("action {0} does not fit in {ACTION_BITS} bits")]
    ActionTooWide(u8),
    #[error("capacity must be positive")]
    ZeroCapacity,
    #[error("state width must lie in 1..=56 bits, got {0}")]
    BadStateBits(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: u64,
    pub action: u8,
    pub reward: f16,
    pub next_state: u64,
}

/// Record bit layout for a given state width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordFormat {
    pub state_bits: u32,
}

impl RecordFormat {
    pub fn new(state_bits: u32) -> Result<Self, ReplayError> {
        if state_bits == 0 || state_bits > 56 {
            return Err(ReplayError::BadStateBits(state_bits));
        }
        Ok(Self { state_bits })
    }

    pub fn payload_bits(&self) -> u32 {
        2 * self.state_bits + ACTION_BITS + REWARD_BITS
    }

    pub fn bytes(&self) -> usize {
        self.payload_bits().div_ceil(8) as usize
    }

    fn chain_bit(&self) -> u32 {
        self.payload_bits()
    }

    fn next_shift(&self) -> u32 {
        self.state_bits + ACTION_BITS + REWARD_BITS
    }

    fn check(&self, e: &Experience) -> Result<(), ReplayError> {
        for s in [e.state, e.next_state] {
            if s >> self.state_bits != 0 {
                return Err(ReplayError::StateTooWide(s));
            }
        }
        if u32::from(e.action) >> ACTION_BITS != 0 {
            return Err(ReplayError::ActionTooWide(e.action));
        }
        Ok(())
    }

    pub fn encode(&self, e: &Experience) -> Result<Vec<u8>, ReplayError> {
        self.check(e)?;
        Ok(self.encode_bytes(self.pack(e, false)))
    }

    pub fn decode(&self, bytes: &[u8]) -> Experience {
        self.unpack(self.decode_bytes(bytes)).0
    }

    fn pack(&self, e: &Experience, chained: bool) -> u128 {
        let sb = self.state_bits;
        let mut v = u128::from(e.state);
        v |= u128::from(e.action) << sb;
        v |= u128::from(e.reward.to_bits()) << (sb + ACTION_BITS);
        if chained {
            v |= 1u128 << self.chain_bit();
        } else {
            v |= u128::from(e.next_state) << self.next_shift();
        }
        v
    }

    /// Returns the record and whether it is chained.
    fn unpack(&self, v: u128) -> (Experience, bool) {
        let sb = self.state_bits;
        let mask = |bits: u32| (1u128 << bits) - 1;
        let e = Experience {
            state: (v & mask(sb)) as u64,
            action: ((v >> sb) & mask(ACTION_BITS)) as u8,
            reward: f16::from_bits(((v >> (sb + ACTION_BITS)) & mask(REWARD_BITS)) as u16),
            next_state: ((v >> self.next_shift()) & mask(sb)) as u64,
        };
        (e, (v >> self.chain_bit()) & 1 == 1)
    }

    fn encode_bytes(&self, v: u128) -> Vec<u8> {
        v.to_le_bytes()[..self.bytes()].to_vec()
    }

    fn decode_bytes(&self, bytes: &[u8]) -> u128 {
        let mut buf = [0u8; 16];
        buf[..self.bytes()].copy_from_slice(&bytes[..self.bytes()]);
        u128::from_le_bytes(buf)
    }
}

#[derive(Debug, Clone)]
pub struct ExperienceBuffer {
    format: RecordFormat,
    capacity: usize,
    data: Vec<u8>,
    cursor: usize,
    fill: usize,
    total_pushes: u64,
}

impl ExperienceBuffer {
    pub fn new(capacity: usize, state_bits: u32) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::ZeroCapacity);
        }
        let format = RecordFormat::new(state_bits)?;
        Ok(Self {
            format,
            capacity,
            data: vec![0; capacity * format.bytes()],
            cursor: 0,
            fill: 0,
            total_pushes: 0,
        })
    }

    pub fn format(&self) -> RecordFormat {
        self.format
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.fill
    }

    pub fn is_empty(&self) -> bool {
        self.fill == 0
    }

    pub fn is_full(&self) -> bool {
        self.fill == self.capacity
    }

    pub fn total_pushes(&self) -> u64 {
        self.total_pushes
    }

    /// Bytes held by the record ring.
    pub fn storage_bytes(&self) -> usize {
        self.data.len()
    }

    fn slot(&self, i: usize) -> &[u8] {
        let w = self.format.bytes();
        &self.data[i * w..(i + 1) * w]
    }

    fn write_slot(&mut self, i: usize, v: u128) {
        let w = self.format.bytes();
        let bytes = self.format.encode_bytes(v);
        self.data[i * w..(i + 1) * w].copy_from_slice(&bytes);
    }

    fn newest(&self) -> Option<usize> {
        (self.fill > 0).then(|| (self.cursor + self.capacity - 1) % self.capacity)
    }

    pub fn push(&mut self, e: Experience) -> Result<(), ReplayError> {
        self.format.check(&e)?;
        if let Some(prev) = self.newest() {
            let (prev_e, chained) = self.format.unpack(self.format.decode_bytes(self.slot(prev)));
            if !chained && prev_e.next_state == e.state && self.capacity > 1 {
                let v = self.format.pack(&prev_e, true);
                self.write_slot(prev, v);
            }
        }
        let v = self.format.pack(&e, false);
        self.write_slot(self.cursor, v);
        self.cursor = (self.cursor + 1) % self.capacity;
        self.fill = (self.fill + 1).min(self.capacity);
        self.total_pushes += 1;
        Ok(())
    }

    /// Record at ring slot `slot` (not push order).
    pub fn get(&self, slot: usize) -> Option<Experience> {
        if slot >= self.fill {
            return None;
        }
        let (mut e, chained) = self.format.unpack(self.format.decode_bytes(self.slot(slot)));
        if chained {
            let succ = (slot + 1) % self.capacity;
            e.next_state = self.format.unpack(self.format.decode_bytes(self.slot(succ))).0.state;
        }
        Some(e)
    }

    /// Records from oldest to newest.
    pub fn iter_fifo(&self) -> impl Iterator<Item = Experience> + '_ {
        let start = if self.is_full() { self.cursor } else { 0 };
        (0..self.fill).map(move |k| self.get((start + k) % self.capacity).expect("slot in range"))
    }

    /// Number of records currently stored without an explicit next state.
    pub fn chained_count(&self) -> usize {
        (0..self.fill)
            .filter(|&i| self.format.unpack(self.format.decode_bytes(self.slot(i))).1)
            .count()
    }

    pub fn sample_indices(
        &self,
        n_batches: usize,
        batch_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<Vec<usize>>, ReplayError> {
        if !self.is_full() {
            return Err(ReplayError::NotFull {
                fill: self.fill,
                capacity: self.capacity,
            });
        }
        Ok((0..n_batches)
            .map(|_| (0..batch_size).map(|_| rng.gen_range(0..self.capacity)).collect())
            .collect())
    }

    /// Uniform sampling with replacement.
    pub fn sample_batches(
        &self,
        n_batches: usize,
        batch_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<Vec<Experience>>, ReplayError> {
        let idx = self.sample_indices(n_batches, batch_size, rng)?;
        Ok(idx
            .into_iter()
            .map(|b| b.into_iter().map(|i| self.get(i).expect("full buffer")).collect())
            .collect())
    }
}
