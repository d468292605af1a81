//! Hybrid storage system model: tier latency profiles, capacity accounting,
//! placement execution with background eviction, and per-page metadata.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{Op, StorageRequest, PAGE_SIZE};

pub type TierId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum HssError {
    #[error("tier {tier} out of range (system has {tiers} tiers)")]
    InvalidTier { tier: TierId, tiers: usize },
    #[error("capacity exhausted: cannot place {needed} pages at or below tier {tier}")]
    CapacityExhausted { tier: TierId, needed: u64 },
    #[error("page {0} is not resident")]
    NotResident(u64),
    #[error("invalid device profile `{name}`: {reason}")]
    InvalidProfile { name: String, reason: String },
    #[error("a hybrid system needs at least two tiers")]
    TooFewTiers,
}

/// Per-tier latency and capacity model. Latencies are per 4 KiB page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    pub capacity_pages: u64,
    pub read_latency_ns: f64,
    pub write_latency_ns: f64,
    /// Bytes per second.
    pub seq_read_bandwidth: f64,
    pub seq_write_bandwidth: f64,
    /// Charged once per non-sequential access; zero for flash.
    pub seek_penalty_ns: f64,
}

impl DeviceProfile {
    /// Derive per-page latencies from datasheet numbers. The per-page cost is
    /// the slower of the bandwidth-bound transfer time and the IOPS-bound
    /// service time.
    pub fn from_datasheet(
        name: &str,
        capacity_pages: u64,
        seq_read_bandwidth: f64,
        seq_write_bandwidth: f64,
        random_read_iops: Option<f64>,
        random_write_iops: Option<f64>,
        seek_penalty_ns: f64,
    ) -> Self {
        let per_page = |bw: f64, iops: Option<f64>| {
            let transfer = PAGE_SIZE as f64 / bw * 1e9;
            iops.map_or(transfer, |iops| transfer.max(1e9 / iops))
        };
        Self {
            name: name.to_string(),
            capacity_pages,
            read_latency_ns: per_page(seq_read_bandwidth, random_read_iops),
            write_latency_ns: per_page(seq_write_bandwidth, random_write_iops),
            seq_read_bandwidth,
            seq_write_bandwidth,
            seek_penalty_ns,
        }
    }

    /// High-end NVMe SSD: 2.4/2 GB/s, 550k/500k random IOPS.
    pub fn high_end(capacity_pages: u64) -> Self {
        Self::from_datasheet("H", capacity_pages, 2.4e9, 2.0e9, Some(550_000.0), Some(500_000.0), 0.0)
    }

    /// Middle-end SATA TLC SSD: 550/510 MB/s, 895k/21k random IOPS.
    pub fn middle_end(capacity_pages: u64) -> Self {
        Self::from_datasheet("M", capacity_pages, 550e6, 510e6, Some(895_000.0), Some(21_000.0), 0.0)
    }

    /// 7200 RPM HDD: 210 MB/s sustained, 4 ms average seek.
    pub fn low_end_hdd(capacity_pages: u64) -> Self {
        Self::from_datasheet("L", capacity_pages, 210e6, 210e6, None, None, 4e6)
    }

    /// Low-end SATA SSD: 520/450 MB/s.
    pub fn low_end_ssd(capacity_pages: u64) -> Self {
        Self::from_datasheet("L_SSD", capacity_pages, 520e6, 450e6, None, None, 0.0)
    }

    pub fn by_name(name: &str, capacity_pages: u64) -> Option<Self> {
        match name {
            "H" => Some(Self::high_end(capacity_pages)),
            "M" => Some(Self::middle_end(capacity_pages)),
            "L" => Some(Self::low_end_hdd(capacity_pages)),
            "L_SSD" => Some(Self::low_end_ssd(capacity_pages)),
            _ => None,
        }
    }

    pub fn per_page_latency(&self, op: Op) -> f64 {
        match op {
            Op::Read => self.read_latency_ns,
            Op::Write => self.write_latency_ns,
        }
    }

    pub fn validate(&self) -> Result<(), HssError> {
        let bad = |reason: &str| HssError::InvalidProfile {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.capacity_pages == 0 {
            return Err(bad("capacity must be at least one page"));
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.read_latency_ns) || !positive(self.write_latency_ns) {
            return Err(bad("latencies must be positive"));
        }
        if !(self.seek_penalty_ns.is_finite() && self.seek_penalty_ns >= 0.0) {
            return Err(bad("seek penalty must be non-negative"));
        }
        Ok(())
    }
}

/// Service time of one access, in nanoseconds.
pub fn device_latency(profile: &DeviceProfile, op: Op, size_pages: u64, sequential: bool) -> f64 {
    debug_assert!(size_pages >= 1);
    let seek = if sequential { 0.0 } else { profile.seek_penalty_ns };
    seek + size_pages as f64 * profile.per_page_latency(op)
}

/// Named tier stacks, fastest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HssPreset {
    #[serde(rename = "H&M")]
    PerformanceOriented,
    #[serde(rename = "H&L")]
    CostOriented,
    #[serde(rename = "H&M&L")]
    TriHdd,
    #[serde(rename = "H&M&L_SSD")]
    TriSsd,
}

impl HssPreset {
    pub fn device_names(self) -> &'static [&'static str] {
        match self {
            HssPreset::PerformanceOriented => &["H", "M"],
            HssPreset::CostOriented => &["H", "L"],
            HssPreset::TriHdd => &["H", "M", "L"],
            HssPreset::TriSsd => &["H", "M", "L_SSD"],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            HssPreset::PerformanceOriented => "H&M",
            HssPreset::CostOriented => "H&L",
            HssPreset::TriHdd => "H&M&L",
            HssPreset::TriSsd => "H&M&L_SSD",
        }
    }

    /// Profiles sized against a working set: every tier above the last gets
    /// `upper_pct[i]` percent of it (at least one page), the last tier holds
    /// the whole working set.
    pub fn build(self, working_set: u64, upper_pct: &[f64]) -> Vec<DeviceProfile> {
        let names = self.device_names();
        names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let cap = if i + 1 == names.len() {
                    working_set.max(1)
                } else {
                    let pct = upper_pct.get(i).copied().unwrap_or(10.0);
                    ((working_set as f64 * pct / 100.0).round() as u64).max(1)
                };
                DeviceProfile::by_name(name, cap).expect("preset device names are known")
            })
            .collect()
    }

    /// Default upper-tier capacity percentages.
    pub fn default_upper_pct(self) -> &'static [f64] {
        match self {
            HssPreset::PerformanceOriented | HssPreset::CostOriented => &[10.0],
            HssPreset::TriHdd | HssPreset::TriSsd => &[5.0, 10.0],
        }
    }
}

/// Victim ordering inside a tier: the resident with the smallest key is
/// evicted first. Keys are recomputed whenever a page is accessed.
pub trait VictimOrder: Send + Sync {
    fn key(&self, page: u64, step: u64) -> u64;
}

/// Least-recently-used ordering.
#[derive(Debug, Default, Clone, Copy)]
pub struct Lru;

impl VictimOrder for Lru {
    fn key(&self, _page: u64, step: u64) -> u64 {
        step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServeOptions {
    /// Charge the target-tier write of a read-triggered migration to the
    /// request latency. When false the copy happens in the background.
    pub charge_migration_write: bool,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            charge_migration_write: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageMeta {
    pub tier: Option<TierId>,
    pub access_count: u64,
    pub last_access_step: Option<u64>,
    order_key: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Eviction {
    pub page: u64,
    pub from: TierId,
    pub to: TierId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceOutcome {
    /// Foreground request latency `L_t`.
    pub latency_ns: f64,
    pub evicted: Vec<Eviction>,
    /// Background eviction time `L_e`.
    pub eviction_latency_ns: f64,
    pub promoted: bool,
    /// Tier the request's pages ended up on.
    pub served_tier: TierId,
}

impl ServiceOutcome {
    pub fn had_eviction(&self) -> bool {
        !self.evicted.is_empty()
    }
}

/// Raw per-request state before binning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawFeatures {
    pub size_pages: u32,
    pub op: Op,
    /// Requests since the page was last touched; `None` on first touch.
    pub access_interval: Option<u64>,
    pub access_count: u64,
    pub fast_remaining_fraction: f64,
    /// Present on systems with three or more tiers.
    pub mid_remaining_fraction: Option<f64>,
    pub current_tier: Option<TierId>,
    pub n_tiers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDump {
    pub step: u64,
    pub tiers: Vec<String>,
    pub resident_pages: Vec<u64>,
    pub capacity_pages: Vec<u64>,
    pub evictions_from: Vec<u64>,
    pub unplaced_known_pages: u64,
}

struct Plan {
    target: TierId,
    incoming: u64,
    from_tier: Vec<u64>,
    latency: f64,
}

/// Live hybrid storage state. Single writer.
#[derive(Clone)]
pub struct HssState {
    tiers: Vec<DeviceProfile>,
    pages: HashMap<u64, PageMeta>,
    residents: Vec<BTreeSet<(u64, u64)>>,
    last_end: Vec<Option<u64>>,
    evictions_from: Vec<u64>,
    step: u64,
    order: Arc<dyn VictimOrder>,
    options: ServeOptions,
}

impl std::fmt::Debug for HssState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HssState")
            .field("tiers", &self.tiers)
            .field("step", &self.step)
            .field(
                "resident",
                &self.residents.iter().map(BTreeSet::len).collect::<Vec<_>>(),
            )
            .finish()
    }
}

impl HssState {
    pub fn new(tiers: Vec<DeviceProfile>) -> Result<Self, HssError> {
        Self::with_options(tiers, ServeOptions::default())
    }

    pub fn with_options(tiers: Vec<DeviceProfile>, options: ServeOptions) -> Result<Self, HssError> {
        if tiers.len() < 2 {
            return Err(HssError::TooFewTiers);
        }
        for t in &tiers {
            t.validate()?;
        }
        let n = tiers.len();
        Ok(Self {
            tiers,
            pages: HashMap::new(),
            residents: vec![BTreeSet::new(); n],
            last_end: vec![None; n],
            evictions_from: vec![0; n],
            step: 0,
            order: Arc::new(Lru),
            options,
        })
    }

    /// Replace the victim ordering. Only valid before the first request.
    pub fn set_victim_order(&mut self, order: Arc<dyn VictimOrder>) {
        assert_eq!(self.step, 0, "victim order must be chosen before serving");
        self.order = order;
    }

    pub fn tiers(&self) -> &[DeviceProfile] {
        &self.tiers
    }

    pub fn n_tiers(&self) -> usize {
        self.tiers.len()
    }

    pub fn slowest(&self) -> TierId {
        self.tiers.len() - 1
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn options(&self) -> ServeOptions {
        self.options
    }

    pub fn page(&self, page: u64) -> Option<&PageMeta> {
        self.pages.get(&page)
    }

    pub fn tier_of(&self, page: u64) -> Option<TierId> {
        self.pages.get(&page).and_then(|m| m.tier)
    }

    pub fn resident_count(&self, tier: TierId) -> u64 {
        self.residents[tier].len() as u64
    }

    pub fn remaining_capacity(&self, tier: TierId) -> u64 {
        self.tiers[tier].capacity_pages - self.resident_count(tier)
    }

    pub fn remaining_fraction(&self, tier: TierId) -> f64 {
        self.remaining_capacity(tier) as f64 / self.tiers[tier].capacity_pages as f64
    }

    pub fn residents(&self, tier: TierId) -> impl Iterator<Item = u64> + '_ {
        self.residents[tier].iter().map(|&(_, p)| p)
    }

    /// Next victim of `tier` and its ordering key.
    pub fn peek_victim(&self, tier: TierId) -> Option<(u64, u64)> {
        self.residents[tier].first().map(|&(k, p)| (p, k))
    }

    pub fn evictions_from(&self, tier: TierId) -> u64 {
        self.evictions_from[tier]
    }

    fn is_sequential(&self, tier: TierId, first_page: u64) -> bool {
        self.last_end[tier] == Some(first_page)
    }

    pub fn snapshot_features(&self, req: &StorageRequest) -> RawFeatures {
        let meta = self.pages.get(&req.page).copied().unwrap_or_default();
        RawFeatures {
            size_pages: req.size_pages,
            op: req.op,
            access_interval: meta.last_access_step.map(|s| self.step - s),
            access_count: meta.access_count,
            fast_remaining_fraction: self.remaining_fraction(0),
            mid_remaining_fraction: (self.n_tiers() >= 3).then(|| self.remaining_fraction(1)),
            current_tier: meta.tier,
            n_tiers: self.n_tiers(),
        }
    }

    fn detach(&mut self, page: u64) -> Option<TierId> {
        let meta = self.pages.get_mut(&page)?;
        let tier = meta.tier.take()?;
        self.residents[tier].remove(&(meta.order_key, page));
        Some(tier)
    }

    fn attach(&mut self, page: u64, tier: TierId) {
        let meta = self.pages.entry(page).or_default();
        debug_assert!(meta.tier.is_none());
        meta.tier = Some(tier);
        self.residents[tier].insert((meta.order_key, page));
    }

    /// Free `needed` pages on `tier` by pushing victims one tier down,
    /// cascading as required. `protect` pages are never chosen.
    fn make_room(
        &mut self,
        tier: TierId,
        needed: u64,
        protect: &std::ops::Range<u64>,
        evicted: &mut Vec<Eviction>,
        latency: &mut f64,
    ) -> Result<(), HssError> {
        while self.remaining_capacity(tier) < needed {
            let victim = self.residents[tier]
                .iter()
                .map(|&(_, p)| p)
                .find(|p| !protect.contains(p))
                .ok_or(HssError::CapacityExhausted { tier, needed })?;
            let dest = tier + 1;
            if dest >= self.n_tiers() {
                return Err(HssError::CapacityExhausted { tier, needed });
            }
            self.make_room(dest, 1, protect, evicted, latency)?;
            self.detach(victim);
            self.attach(victim, dest);
            *latency += device_latency(&self.tiers[tier], Op::Read, 1, false)
                + device_latency(&self.tiers[dest], Op::Write, 1, false);
            self.evictions_from[tier] += 1;
            evicted.push(Eviction {
                page: victim,
                from: tier,
                to: dest,
            });
        }
        Ok(())
    }

    fn plan(&self, req: &StorageRequest, action: TierId) -> Result<Plan, HssError> {
        let n = self.n_tiers();
        if action >= n {
            return Err(HssError::InvalidTier { tier: action, tiers: n });
        }
        let size = u64::from(req.size_pages);
        // A request larger than the chosen tier lands on the first tier below
        // it that can hold it.
        let target =
            (action..n)
                .find(|&t| self.tiers[t].capacity_pages >= size)
                .ok_or(HssError::CapacityExhausted {
                    tier: action,
                    needed: size,
                })?;

        let mut on_target = 0u64;
        let mut unplaced = 0u64;
        let mut from_tier = vec![0u64; n];
        for p in req.pages() {
            match self.tier_of(p) {
                Some(t) if t == target => on_target += 1,
                Some(t) => from_tier[t] += 1,
                None => unplaced += 1,
            }
        }
        let incoming = size - on_target;
        let room: u64 =
            (target..n).map(|t| self.remaining_capacity(t)).sum::<u64>() + from_tier[target..].iter().sum::<u64>();
        if room < incoming {
            return Err(HssError::CapacityExhausted {
                tier: target,
                needed: incoming,
            });
        }

        let first = req.page;
        let mut latency = 0.0;
        match req.op {
            Op::Write => {
                latency = device_latency(&self.tiers[target], Op::Write, size, self.is_sequential(target, first));
            }
            Op::Read => {
                let local = on_target + unplaced;
                if local > 0 {
                    latency += device_latency(&self.tiers[target], Op::Read, local, self.is_sequential(target, first));
                }
                for (src, &count) in from_tier.iter().enumerate() {
                    if count == 0 {
                        continue;
                    }
                    latency += device_latency(&self.tiers[src], Op::Read, count, self.is_sequential(src, first));
                    if self.options.charge_migration_write {
                        latency +=
                            device_latency(&self.tiers[target], Op::Write, count, self.is_sequential(target, first));
                    }
                }
            }
        }
        Ok(Plan {
            target,
            incoming,
            from_tier,
            latency,
        })
    }

    /// Foreground latency `serve(req, action)` would report, without serving.
    pub fn quote(&self, req: &StorageRequest, action: TierId) -> Result<f64, HssError> {
        self.plan(req, action).map(|p| p.latency)
    }

    /// Serve `req` with its pages placed on `action`.
    pub fn serve(&mut self, req: &StorageRequest, action: TierId) -> Result<ServiceOutcome, HssError> {
        let Plan {
            target,
            incoming,
            from_tier,
            latency,
        } = self.plan(req, action)?;
        let promoted = from_tier[target + 1..].iter().any(|&c| c > 0);
        if req.op == Op::Read {
            for (src, &count) in from_tier.iter().enumerate() {
                if count > 0 {
                    self.last_end[src] = Some(req.end_page());
                }
            }
        }
        self.last_end[target] = Some(req.end_page());

        // Move or drop copies living elsewhere, then make room and place.
        for p in req.pages() {
            if matches!(self.tier_of(p), Some(t) if t != target) {
                self.detach(p);
            }
        }
        let mut evicted = Vec::new();
        let mut eviction_latency = 0.0;
        let protect = req.pages();
        self.make_room(target, incoming, &protect, &mut evicted, &mut eviction_latency)?;

        let step = self.step;
        for p in req.pages() {
            self.detach(p);
            let key = self.order.key(p, step);
            let meta = self.pages.entry(p).or_default();
            meta.access_count += 1;
            meta.last_access_step = Some(step);
            meta.order_key = key;
            self.attach(p, target);
        }
        self.step += 1;

        Ok(ServiceOutcome {
            latency_ns: latency,
            evicted,
            eviction_latency_ns: eviction_latency,
            promoted,
            served_tier: target,
        })
    }

    /// Background move of a resident page to a tier with free space.
    /// Returns the copy time.
    pub fn migrate(&mut self, page: u64, to: TierId) -> Result<f64, HssError> {
        let n = self.n_tiers();
        if to >= n {
            return Err(HssError::InvalidTier { tier: to, tiers: n });
        }
        let from = self.tier_of(page).ok_or(HssError::NotResident(page))?;
        if from == to {
            return Ok(0.0);
        }
        if self.remaining_capacity(to) == 0 {
            return Err(HssError::CapacityExhausted { tier: to, needed: 1 });
        }
        self.detach(page);
        self.attach(page, to);
        if to > from {
            self.evictions_from[from] += 1;
        }
        Ok(
            device_latency(&self.tiers[from], Op::Read, 1, false)
                + device_latency(&self.tiers[to], Op::Write, 1, false),
        )
    }

    pub fn dump(&self) -> StateDump {
        StateDump {
            step: self.step,
            tiers: self.tiers.iter().map(|t| t.name.clone()).collect(),
            resident_pages: (0..self.n_tiers()).map(|t| self.resident_count(t)).collect(),
            capacity_pages: self.tiers.iter().map(|t| t.capacity_pages).collect(),
            evictions_from: self.evictions_from.clone(),
            unplaced_known_pages: self.pages.values().filter(|m| m.tier.is_none()).count() as u64,
        }
    }

    /// Check the capacity bookkeeping against the page map.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut counted = vec![0u64; self.n_tiers()];
        for (&p, m) in &self.pages {
            if let Some(t) = m.tier {
                counted[t] += 1;
                if !self.residents[t].contains(&(m.order_key, p)) {
                    return Err(format!("page {p} missing from tier {t} order"));
                }
            }
        }
        for (t, &n) in counted.iter().enumerate() {
            if n != self.resident_count(t) {
                return Err(format!(
                    "tier {t}: map says {n} residents, order has {}",
                    self.resident_count(t)
                ));
            }
            if n > self.tiers[t].capacity_pages {
                return Err(format!("tier {t} over capacity"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_tier(fast_cap: u64, slow_cap: u64) -> HssState {
        HssState::new(vec![
            DeviceProfile::high_end(fast_cap),
            DeviceProfile::middle_end(slow_cap),
        ])
        .unwrap()
    }

    fn read(page: u64) -> StorageRequest {
        StorageRequest::new(0, Op::Read, page, 1)
    }

    fn write(page: u64) -> StorageRequest {
        StorageRequest::new(0, Op::Write, page, 1)
    }

    #[test]
    fn datasheet_derivation() {
        let h = DeviceProfile::high_end(1);
        assert!((h.read_latency_ns - 1e9 / 550_000.0).abs() < 1e-9);
        assert!((h.read_latency_ns - 1818.18).abs() < 0.01);
        assert!((h.write_latency_ns - 2048.0).abs() < 1e-9);
        let m = DeviceProfile::middle_end(1);
        assert!((m.read_latency_ns - 4096.0 / 550e6 * 1e9).abs() < 1e-9);
        assert!((m.write_latency_ns - 1e9 / 21_000.0).abs() < 1e-9);
        let l = DeviceProfile::low_end_hdd(1);
        assert!((l.read_latency_ns - 4096.0 / 210e6 * 1e9).abs() < 1e-9);
        assert_eq!(l.seek_penalty_ns, 4e6);
    }

    #[test]
    fn single_page_latency_is_per_page_cost() {
        let h = DeviceProfile::high_end(1);
        assert_eq!(device_latency(&h, Op::Read, 1, true), h.read_latency_ns);
        assert_eq!(device_latency(&h, Op::Read, 1, false), h.read_latency_ns);
        let l = DeviceProfile::low_end_hdd(1);
        assert_eq!(device_latency(&l, Op::Read, 1, false), l.read_latency_ns + 4e6);
    }

    #[test]
    fn latency_monotone_in_size() {
        for p in [
            DeviceProfile::high_end(1),
            DeviceProfile::middle_end(1),
            DeviceProfile::low_end_hdd(1),
            DeviceProfile::low_end_ssd(1),
        ] {
            for op in [Op::Read, Op::Write] {
                for seq in [true, false] {
                    assert!(device_latency(&p, op, 8, seq) >= device_latency(&p, op, 4, seq));
                }
            }
        }
    }

    #[test]
    fn resident_fast_read_is_served_in_place() {
        let mut s = two_tier(4, 16);
        s.serve(&write(1), 0).unwrap();
        let out = s.serve(&read(1), 0).unwrap();
        assert_eq!(out.latency_ns, s.tiers()[0].read_latency_ns);
        assert!(out.evicted.is_empty());
        assert_eq!(out.eviction_latency_ns, 0.0);
    }

    #[test]
    fn full_fast_tier_evicts_to_slow() {
        let mut s = two_tier(1, 16);
        s.serve(&write(10), 0).unwrap();
        let out = s.serve(&write(11), 0).unwrap();
        assert_eq!(
            out.evicted,
            vec![Eviction {
                page: 10,
                from: 0,
                to: 1
            }]
        );
        let expected = s.tiers()[0].read_latency_ns + s.tiers()[1].write_latency_ns;
        assert!((out.eviction_latency_ns - expected).abs() < 1e-9);
        assert_eq!(s.tier_of(11), Some(0));
        assert_eq!(s.tier_of(10), Some(1));
        // eviction is background: L_t is just the fast write
        assert_eq!(out.latency_ns, s.tiers()[0].write_latency_ns);
    }

    #[test]
    fn write_promotion_drops_slow_copy() {
        let mut s = two_tier(2, 16);
        s.serve(&write(5), 1).unwrap();
        assert_eq!(s.resident_count(1), 1);
        let out = s.serve(&write(5), 0).unwrap();
        assert!(out.promoted);
        assert_eq!(out.latency_ns, s.tiers()[0].write_latency_ns);
        assert_eq!(s.resident_count(1), 0);
        assert_eq!(s.tier_of(5), Some(0));
    }

    #[test]
    fn read_promotion_charges_both_sides() {
        let mut s = two_tier(2, 16);
        s.serve(&write(5), 1).unwrap();
        let out = s.serve(&read(5), 0).unwrap();
        let expected = s.tiers()[1].read_latency_ns + s.tiers()[0].write_latency_ns;
        assert!((out.latency_ns - expected).abs() < 1e-9);

        let mut s = HssState::with_options(
            vec![DeviceProfile::high_end(2), DeviceProfile::middle_end(16)],
            ServeOptions {
                charge_migration_write: false,
            },
        )
        .unwrap();
        s.serve(&write(5), 1).unwrap();
        let out = s.serve(&read(5), 0).unwrap();
        assert_eq!(out.latency_ns, s.tiers()[1].read_latency_ns);
    }

    #[test]
    fn bad_action_is_error() {
        let mut s = two_tier(1, 4);
        assert_eq!(s.serve(&read(0), 2), Err(HssError::InvalidTier { tier: 2, tiers: 2 }));
    }

    #[test]
    fn slowest_tier_overflow_is_error() {
        let mut s = two_tier(1, 2);
        s.serve(&write(0), 1).unwrap();
        s.serve(&write(1), 1).unwrap();
        let err = s.serve(&write(2), 1).unwrap_err();
        assert!(matches!(err, HssError::CapacityExhausted { .. }));
        s.check_invariants().unwrap();
    }

    #[test]
    fn eviction_cascades_down_three_tiers() {
        let mut s = HssState::new(vec![
            DeviceProfile::high_end(1),
            DeviceProfile::middle_end(1),
            DeviceProfile::low_end_hdd(8),
        ])
        .unwrap();
        s.serve(&write(1), 1).unwrap();
        s.serve(&write(2), 0).unwrap();
        let out = s.serve(&write(3), 0).unwrap();
        assert_eq!(out.evicted.len(), 2);
        assert_eq!(s.tier_of(1), Some(2));
        assert_eq!(s.tier_of(2), Some(1));
        assert_eq!(s.tier_of(3), Some(0));
        s.check_invariants().unwrap();
    }

    #[test]
    fn features_track_interval_and_count() {
        let mut s = two_tier(4, 64);
        let f = s.snapshot_features(&read(9));
        assert_eq!(f.access_interval, None);
        assert_eq!(f.access_count, 0);
        assert_eq!(f.fast_remaining_fraction, 1.0);
        assert_eq!(f.current_tier, None);
        for i in 0..10u64 {
            let page = if i == 5 || i == 9 { 9 } else { 100 + i };
            if i == 9 {
                let f = s.snapshot_features(&read(page));
                assert_eq!(f.access_interval, Some(4));
                assert_eq!(f.access_count, 1);
            }
            s.serve(&read(page), 1).unwrap();
        }
    }

    #[test]
    fn hdd_sequential_skips_seek() {
        let mut s = HssState::new(vec![DeviceProfile::high_end(1), DeviceProfile::low_end_hdd(64)]).unwrap();
        let a = s.serve(&StorageRequest::new(0, Op::Write, 0, 4), 1).unwrap();
        let b = s.serve(&StorageRequest::new(0, Op::Write, 4, 4), 1).unwrap();
        assert!(a.latency_ns > 4e6);
        assert!(b.latency_ns < 1e6);
    }

    #[test]
    fn oversized_request_falls_through() {
        let mut s = two_tier(2, 64);
        let out = s.serve(&StorageRequest::new(0, Op::Write, 0, 8), 0).unwrap();
        assert_eq!(out.served_tier, 1);
    }

    proptest::proptest! {
        #[test]
        fn bookkeeping_holds_under_any_schedule(
            steps in proptest::collection::vec((proptest::bool::ANY, 0u64..40, 1u32..6, 0usize..3), 1..200)
        ) {
            let mut s = HssState::new(vec![
                DeviceProfile::high_end(4),
                DeviceProfile::middle_end(8),
                DeviceProfile::low_end_hdd(64),
            ])
            .unwrap();
            for (is_write, page, size, action) in steps {
                let op = if is_write { Op::Write } else { Op::Read };
                let req = StorageRequest::new(0, op, page, size);
                let out = s.serve(&req, action).unwrap();
                proptest::prop_assert!(out.latency_ns.is_finite() && out.latency_ns > 0.0);
                for e in &out.evicted {
                    proptest::prop_assert!(e.to > e.from);
                }
                for p in page..page + u64::from(size) {
                    proptest::prop_assert_eq!(s.tier_of(p), Some(out.served_tier));
                }
                if let Err(e) = s.check_invariants() {
                    proptest::prop_assert!(false, "{}", e);
                }
            }
        }
    }
}
