//! Reference placement policies.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Decision, Policy, PolicyError};
use crate::hssenv::{device_latency, HssState, ServiceOutcome, TierId, VictimOrder};
use crate::trace::{working_set_pages, Op, StorageRequest};

/// Everything in the fastest tier. Needs room for the whole working set.
#[derive(Debug, Default, Clone)]
pub struct FastOnly;

impl Policy for FastOnly {
    fn name(&self) -> String {
        "fast_only".into()
    }

    fn prepare(&mut self, trace: &[StorageRequest], hss: &mut HssState) -> Result<(), PolicyError> {
        let ws = working_set_pages(trace) as u64;
        let cap = hss.tiers()[0].capacity_pages;
        if cap < ws {
            return Err(PolicyError::Config(format!(
                "fast_only needs a fast tier of at least {ws} pages, got {cap}"
            )));
        }
        Ok(())
    }

    fn decide(&mut self, _req: &StorageRequest, _hss: &HssState) -> Result<Decision, PolicyError> {
        Ok(Decision::greedy(0))
    }
}

#[derive(Debug, Default, Clone)]
pub struct SlowOnly;

impl Policy for SlowOnly {
    fn name(&self) -> String {
        "slow_only".into()
    }

    fn decide(&mut self, _req: &StorageRequest, hss: &HssState) -> Result<Decision, PolicyError> {
        Ok(Decision::greedy(hss.slowest()))
    }
}

/// Uniform random tier.
#[derive(Debug, Clone)]
pub struct RandomPlace {
    rng: ChaCha8Rng,
}

impl RandomPlace {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPlace {
    fn name(&self) -> String {
        "random".into()
    }

    fn decide(&mut self, _req: &StorageRequest, hss: &HssState) -> Result<Decision, PolicyError> {
        Ok(Decision::greedy(self.rng.gen_range(0..hss.n_tiers())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CdeParams {
    /// Access count at which a page counts as hot.
    pub t_hot: u64,
    /// Largest request, in pages, treated as a random write.
    pub t_rand: u32,
}

impl Default for CdeParams {
    fn default() -> Self {
        Self { t_hot: 4, t_rand: 8 }
    }
}

/// Hot and random writes go fast, cold sequential writes go slow, reads stay
/// where they are unless hot.
#[derive(Debug, Clone, Default)]
pub struct Cde {
    pub params: CdeParams,
}

impl Policy for Cde {
    fn name(&self) -> String {
        "cde".into()
    }

    fn decide(&mut self, req: &StorageRequest, hss: &HssState) -> Result<Decision, PolicyError> {
        let count = hss.page(req.page).map_or(0, |m| m.access_count);
        let hot = count >= self.params.t_hot;
        let slow = hss.slowest();
        let tier = match req.op {
            Op::Write if hot || req.size_pages <= self.params.t_rand => 0,
            Op::Write => slow,
            Op::Read if hot => 0,
            Op::Read => hss.tier_of(req.page).unwrap_or(slow),
        };
        Ok(Decision::greedy(tier))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpsParams {
    /// Requests per epoch.
    pub epoch: u64,
    /// Also move the epoch's hottest slow pages into free fast space.
    pub promote_hot: bool,
    /// Minimum epoch access count for such a promotion.
    pub promote_min_count: u64,
}

impl Default for HpsParams {
    fn default() -> Self {
        Self {
            epoch: 1000,
            promote_hot: true,
            promote_min_count: 2,
        }
    }
}

/// New pages go fast while space lasts; every epoch the fast residents
/// accessed less than the median are demoted.
#[derive(Debug, Clone, Default)]
pub struct Hps {
    pub params: HpsParams,
    epoch_counts: HashMap<u64, u64>,
    served: u64,
    /// Pages demoted at each epoch end, for inspection.
    pub last_demoted: Vec<u64>,
}

impl Hps {
    pub fn new(params: HpsParams) -> Self {
        Self {
            params,
            ..Self::default()
        }
    }
}

/// Pages whose count lies strictly below the median of `counts`.
pub fn below_median(counts: &[(u64, u64)]) -> Vec<u64> {
    if counts.is_empty() {
        return Vec::new();
    }
    let mut sorted: Vec<u64> = counts.iter().map(|&(_, c)| c).collect();
    sorted.sort_unstable();
    let n = sorted.len();
    let median2 = if n % 2 == 1 {
        2 * sorted[n / 2]
    } else {
        sorted[n / 2 - 1] + sorted[n / 2]
    };
    counts
        .iter()
        .filter(|&&(_, c)| 2 * c < median2)
        .map(|&(p, _)| p)
        .collect()
}

impl Policy for Hps {
    fn name(&self) -> String {
        "hps".into()
    }

    fn decide(&mut self, req: &StorageRequest, hss: &HssState) -> Result<Decision, PolicyError> {
        if let Some(t) = hss.tier_of(req.page) {
            return Ok(Decision::greedy(t));
        }
        let size = u64::from(req.size_pages);
        let tier = if hss.remaining_capacity(0) >= size {
            0
        } else {
            hss.slowest()
        };
        Ok(Decision::greedy(tier))
    }

    fn after_serve(
        &mut self,
        req: &StorageRequest,
        _outcome: &ServiceOutcome,
        hss: &mut HssState,
    ) -> Result<f64, PolicyError> {
        for p in req.pages() {
            *self.epoch_counts.entry(p).or_default() += 1;
        }
        self.served += 1;
        if !self.served.is_multiple_of(self.params.epoch.max(1)) {
            return Ok(0.0);
        }
        let mut background = 0.0;
        let fast: Vec<(u64, u64)> = hss
            .residents(0)
            .map(|p| (p, self.epoch_counts.get(&p).copied().unwrap_or(0)))
            .collect();
        let demote = below_median(&fast);
        for &p in &demote {
            let Some(to) = (1..hss.n_tiers()).find(|&t| hss.remaining_capacity(t) > 0) else {
                break;
            };
            background += hss.migrate(p, to)?;
        }
        if self.params.promote_hot {
            let mut hot: Vec<(u64, u64)> = self
                .epoch_counts
                .iter()
                .filter(|&(&p, &c)| c >= self.params.promote_min_count && hss.tier_of(p).is_some_and(|t| t > 0))
                .map(|(&p, &c)| (p, c))
                .collect();
            hot.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            for (p, _) in hot {
                if hss.remaining_capacity(0) == 0 {
                    break;
                }
                background += hss.migrate(p, 0)?;
            }
        }
        self.last_demoted = demote;
        self.epoch_counts.clear();
        Ok(background)
    }
}

/// Every access to every page, for clairvoyant lookups.
#[derive(Debug, Clone, Default)]
pub struct OracleIndex {
    /// `(step, is_read)` per page, in step order.
    accesses: HashMap<u64, Vec<(u64, bool)>>,
}

impl OracleIndex {
    pub fn build(trace: &[StorageRequest]) -> Self {
        let mut accesses: HashMap<u64, Vec<(u64, bool)>> = HashMap::new();
        for (i, r) in trace.iter().enumerate() {
            for p in r.pages() {
                accesses.entry(p).or_default().push((i as u64, r.op == Op::Read));
            }
        }
        Self { accesses }
    }

    pub fn first_use(&self, page: u64) -> Option<u64> {
        self.accesses.get(&page).and_then(|v| v.first()).map(|&(s, _)| s)
    }

    fn next_access(&self, page: u64, step: u64) -> Option<(u64, bool)> {
        let v = self.accesses.get(&page)?;
        let i = v.partition_point(|&(s, _)| s <= step);
        v.get(i).copied()
    }

    /// First access to `page` strictly after `step`, `u64::MAX` if none.
    pub fn next_use(&self, page: u64, step: u64) -> u64 {
        self.next_access(page, step).map_or(u64::MAX, |(s, _)| s)
    }

    /// Like [`next_use`](Self::next_use), but `u64::MAX` when that access is
    /// a write: a write costs the same wherever the old copy lived.
    pub fn next_read(&self, page: u64, step: u64) -> u64 {
        match self.next_access(page, step) {
            Some((s, true)) => s,
            _ => u64::MAX,
        }
    }
}

/// Evicts the resident whose next read lies farthest in the future.
struct Belady(Arc<OracleIndex>);

impl VictimOrder for Belady {
    fn key(&self, page: u64, step: u64) -> u64 {
        u64::MAX - self.0.next_read(page, step)
    }
}

/// Clairvoyant placement with Belady eviction.
///
/// A request goes to a faster tier when the latency it saves now, plus what
/// its next read saves if it is still resident then, exceeds what the
/// displaced victim's next read will lose.
#[derive(Debug, Clone, Default)]
pub struct Oracle {
    index: Arc<OracleIndex>,
    trace: Arc<Vec<StorageRequest>>,
    step: u64,
}

/// Requests scanned ahead when estimating whether a page stays resident.
const LOOKAHEAD: u64 = 512;

impl Oracle {
    pub fn index(&self) -> &OracleIndex {
        &self.index
    }

    /// Whether a page inserted into the fastest tier now, with next read at
    /// `until`, is still there when that read arrives. Future writes and
    /// first-touch reads are assumed to be inserted and to evict in Belady
    /// order.
    fn survives(&self, hss: &HssState, req: &StorageRequest, until: u64, needed: u64) -> bool {
        let now = self.step - 1;
        if until - now > LOOKAHEAD {
            return hss.peek_victim(0).is_none_or(|(_, key)| until < u64::MAX - key);
        }
        let budget = (until - now) as usize;
        // Slack: free slots plus residents that would be evicted before us.
        let free = hss.remaining_capacity(0) as i64 - needed as i64;
        let farther = hss
            .residents(0)
            .take(budget + needed as usize + 1)
            .filter(|&p| !req.pages().any(|q| q == p))
            .filter(|&p| self.index.next_read(p, now) > until)
            .count() as i64;
        let evicted_now = needed.saturating_sub(hss.remaining_capacity(0)) as i64;
        let mut slack = free.max(0) + farther - evicted_now.min(farther);
        for j in now + 1..until {
            let r = &self.trace[j as usize];
            if req.pages().any(|p| r.pages().any(|q| q == p)) {
                continue;
            }
            let first_touch = r.pages().all(|p| self.index.first_use(p) == Some(j));
            let inserted = r.op == Op::Write || first_touch;
            if inserted {
                if slack <= 0 {
                    return false;
                }
                slack -= 1;
                if r.pages().map(|p| self.index.next_read(p, j)).min().unwrap_or(u64::MAX) > until {
                    slack += 1;
                }
            } else if r.pages().all(|p| hss.tier_of(p) == Some(0))
                && r.pages().map(|p| self.index.next_read(p, j)).min().unwrap_or(u64::MAX) > until
            {
                slack += 1;
            }
        }
        true
    }
}

impl Policy for Oracle {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn prepare(&mut self, trace: &[StorageRequest], hss: &mut HssState) -> Result<(), PolicyError> {
        self.index = Arc::new(OracleIndex::build(trace));
        self.trace = Arc::new(trace.to_vec());
        self.step = 0;
        hss.set_victim_order(Arc::new(Belady(Arc::clone(&self.index))));
        Ok(())
    }

    fn decide(&mut self, req: &StorageRequest, hss: &HssState) -> Result<Decision, PolicyError> {
        let step = self.step;
        self.step += 1;
        let slow = hss.slowest();
        let resident = hss
            .tier_of(req.page)
            .filter(|&t| req.pages().all(|p| hss.tier_of(p) == Some(t)));
        let alt = resident.unwrap_or(slow);
        let next = req
            .pages()
            .map(|p| self.index.next_read(p, step))
            .min()
            .unwrap_or(u64::MAX);
        let size = u64::from(req.size_pages);
        let alt_cost = hss.quote(req, alt)?;
        let read = |t: TierId, n: u64| device_latency(&hss.tiers()[t], Op::Read, n, false);
        for tier in 0..alt {
            let gain_now = alt_cost - hss.quote(req, tier)?;
            let on_tier = req.pages().filter(|&p| hss.tier_of(p) == Some(tier)).count() as u64;
            let needed = size - on_tier;
            let room = hss.remaining_capacity(tier) >= needed;
            let far = hss.peek_victim(tier).map_or(u64::MAX, |(_, key)| u64::MAX - key);
            let survives = next != u64::MAX
                && if tier == 0 {
                    self.survives(hss, req, next, needed)
                } else {
                    room || next < far
                };
            let future = if next != u64::MAX && survives {
                read(alt, size) - read(tier, size)
            } else {
                0.0
            };
            let penalty = if room || far == u64::MAX || (survives && far > next) {
                0.0
            } else {
                (needed - hss.remaining_capacity(tier)) as f64 * (read(tier + 1, 1) - read(tier, 1))
            };
            if gain_now + future >= penalty && gain_now + future > 0.0 {
                return Ok(Decision::greedy(tier));
            }
        }
        Ok(Decision::greedy(alt))
    }
}

/// Three-tier rule: hot pages to the fastest tier, cold pages to the middle
/// one, and first-touch sequential data to the slowest.
#[derive(Debug, Clone, Default)]
pub struct TriHeuristic {
    pub params: CdeParams,
}

impl Policy for TriHeuristic {
    fn name(&self) -> String {
        "tri_heuristic".into()
    }

    fn prepare(&mut self, _trace: &[StorageRequest], hss: &mut HssState) -> Result<(), PolicyError> {
        if hss.n_tiers() != 3 {
            return Err(PolicyError::Config(format!(
                "tri_heuristic needs 3 tiers, system has {}",
                hss.n_tiers()
            )));
        }
        Ok(())
    }

    fn decide(&mut self, req: &StorageRequest, hss: &HssState) -> Result<Decision, PolicyError> {
        let count = hss.page(req.page).map_or(0, |m| m.access_count);
        let tier = if count >= self.params.t_hot {
            0
        } else if count > 0 || req.size_pages <= self.params.t_rand {
            1
        } else {
            2
        };
        Ok(Decision::greedy(tier))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{run_policy, RunOptions};
    use crate::hssenv::DeviceProfile;
    use proptest::prelude::*;

    fn req(op: Op, page: u64, size: u32) -> StorageRequest {
        StorageRequest::new(0, op, page, size)
    }

    fn dual(fast: u64, slow: u64) -> HssState {
        HssState::new(vec![DeviceProfile::high_end(fast), DeviceProfile::middle_end(slow)]).unwrap()
    }

    #[test]
    fn cde_rules() {
        let mut hss = dual(10, 100);
        let mut cde = Cde::default();
        assert_eq!(cde.decide(&req(Op::Write, 0, 1), &hss).unwrap().tier, 0);
        assert_eq!(cde.decide(&req(Op::Write, 0, 64), &hss).unwrap().tier, 1);
        // Four reads while resident slow make the page hot.
        for _ in 0..4 {
            let d = cde.decide(&req(Op::Read, 50, 1), &hss).unwrap();
            assert_eq!(d.tier, 1);
            hss.serve(&req(Op::Read, 50, 1), d.tier).unwrap();
        }
        assert_eq!(cde.decide(&req(Op::Read, 50, 1), &hss).unwrap().tier, 0);
    }

    #[test]
    fn hps_places_fresh_pages_fast_then_demotes_cold() {
        let mut hss = dual(4, 100);
        let mut hps = Hps::new(HpsParams {
            epoch: 6,
            promote_hot: false,
            promote_min_count: 2,
        });
        let pages = [1, 2, 3, 1, 1, 2];
        for p in pages {
            let r = req(Op::Read, p, 1);
            let d = hps.decide(&r, &hss).unwrap();
            let o = hss.serve(&r, d.tier).unwrap();
            hps.after_serve(&r, &o, &mut hss).unwrap();
        }
        // Counts 3, 2, 1: median 2, so only page 3 is cold.
        assert_eq!(hps.last_demoted, vec![3]);
        assert_eq!(hss.tier_of(3), Some(1));
        assert_eq!(hss.tier_of(1), Some(0));
    }

    proptest! {
        #[test]
        fn below_median_matches_sort(counts in prop::collection::vec(0u64..20, 1..40)) {
            let items: Vec<(u64, u64)> = counts.iter().enumerate().map(|(i, &c)| (i as u64, c)).collect();
            let mut sorted = counts.clone();
            sorted.sort();
            let n = sorted.len();
            let median = if n % 2 == 1 { sorted[n / 2] as f64 } else { (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0 };
            let want: Vec<u64> = items.iter().filter(|&&(_, c)| (c as f64) < median).map(|&(p, _)| p).collect();
            prop_assert_eq!(below_median(&items), want);
        }
    }

    #[test]
    fn oracle_index_next_use() {
        let trace = vec![req(Op::Read, 1, 1), req(Op::Read, 2, 1), req(Op::Read, 0, 2)];
        let idx = OracleIndex::build(&trace);
        assert_eq!(idx.next_use(1, 0), 2);
        assert_eq!(idx.next_use(0, 0), 2);
        assert_eq!(idx.next_use(2, 1), u64::MAX);
        assert_eq!(idx.next_use(2, 0), 1);
        assert_eq!(idx.next_use(9, 0), u64::MAX);
    }

    #[test]
    fn oracle_basic_rules() {
        let trace = vec![req(Op::Write, 1, 1), req(Op::Read, 2, 1), req(Op::Read, 1, 1)];
        let mut hss = dual(1, 10);
        let mut o = Oracle::default();
        o.prepare(&trace, &mut hss).unwrap();
        assert_eq!(o.decide(&trace[0], &hss).unwrap().tier, 0);

        // Every fixed schedule of the three requests; the oracle matches the best.
        let mut best = f64::INFINITY;
        for mask in 0..8u32 {
            let mut h = dual(1, 10);
            let mut total = 0.0;
            for (i, r) in trace.iter().enumerate() {
                total += h.serve(r, (mask >> i & 1) as usize).unwrap().latency_ns;
            }
            best = best.min(total);
        }
        let got = run_policy(&mut Oracle::default(), &trace, dual(1, 10), "t", RunOptions::default(), None).unwrap();
        assert!((got.total_latency_ns - best).abs() < 1e-6, "{} vs {best}", got.total_latency_ns);
    }

    #[test]
    fn fast_only_requires_capacity() {
        let trace = vec![req(Op::Write, 1, 4)];
        let hss = dual(2, 10);
        let err = run_policy(&mut FastOnly, &trace, hss, "t", RunOptions::default(), None).unwrap_err();
        assert!(matches!(err, PolicyError::Config(_)));
    }

    #[test]
    fn constant_policies() {
        let trace: Vec<_> = (0..20)
            .map(|i| req(if i % 3 == 0 { Op::Write } else { Op::Read }, i % 7, 1))
            .collect();
        let fast = run_policy(&mut FastOnly, &trace, dual(7, 7), "t", RunOptions::default(), None).unwrap();
        assert_eq!(fast.fast_preference, 1.0);
        assert_eq!(fast.fast_evictions, 0);
        let slow = run_policy(&mut SlowOnly, &trace, dual(7, 7), "t", RunOptions::default(), None).unwrap();
        assert_eq!(slow.fast_preference, 0.0);
        assert!(fast.avg_latency_ns < slow.avg_latency_ns);
    }

    #[test]
    fn random_is_reproducible() {
        let hss = dual(5, 50);
        let mut a = RandomPlace::new(3);
        let mut b = RandomPlace::new(3);
        let r = req(Op::Read, 0, 1);
        let xs: Vec<_> = (0..50).map(|_| a.decide(&r, &hss).unwrap().tier).collect();
        let ys: Vec<_> = (0..50).map(|_| b.decide(&r, &hss).unwrap().tier).collect();
        assert_eq!(xs, ys);
        assert!(xs.contains(&0) && xs.contains(&1));
    }

    #[test]
    fn tri_heuristic_rules() {
        let hss = HssState::new(crate::hssenv::HssPreset::TriHdd.build(100, &[5.0, 10.0])).unwrap();
        let mut t = TriHeuristic::default();
        assert_eq!(t.decide(&req(Op::Write, 0, 32), &hss).unwrap().tier, 2);
        let mut hss = hss;
        for _ in 0..4 {
            hss.serve(&req(Op::Read, 7, 1), 1).unwrap();
        }
        assert_eq!(t.decide(&req(Op::Read, 7, 1), &hss).unwrap().tier, 0);
        hss.serve(&req(Op::Read, 8, 1), 1).unwrap();
        assert_eq!(t.decide(&req(Op::Read, 8, 1), &hss).unwrap().tier, 1);
    }
}
