//! Stand-in streams calibrated to the published per-workload characteristics
//! of the MSRC enterprise traces (write share, mean request size, mean page
//! access count, distinct request count).
//!
//! The generator lays out `E` extents back to back in address order, sizes
//! each one from a geometric distribution with the target mean (the 64 most
//! popular extents get the mean size exactly, rounded at random), and then
//! emits `N = E × count` requests. A request either introduces the next
//! untouched extent (so fresh data streams in address order) or re-reads an
//! already-introduced extent picked with Zipf(1) popularity. Every extent is
//! always accessed as a whole, so the mean page access count is `N / E`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Op, StorageRequest};

const GAP_NS: u64 = 1_000;
const MAX_EXTENT_PAGES: u32 = 256;
const ZIPF_EXPONENT: f64 = 1.0;
const PINNED_RANKS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalogProfile {
    pub name: &'static str,
    pub write_fraction: f64,
    pub avg_request_size: f64,
    pub avg_access_count: f64,
    pub unique_requests: u64,
}

impl AnalogProfile {
    pub fn by_name(name: &str) -> Option<&'static AnalogProfile> {
        MSRC_PROFILES.iter().find(|p| p.name == name)
    }

    /// Request count when the distinct-request column is honoured exactly,
    /// clamped to `[min, max]`.
    pub fn natural_len(&self, min: usize, max: usize) -> usize {
        let n = (self.unique_requests as f64 * self.avg_access_count).round() as usize;
        n.clamp(min, max)
    }
}

macro_rules! profile {
    ($name:literal, $w:literal, $size:literal, $cnt:literal, $uniq:literal) => {
        AnalogProfile {
            name: $name,
            write_fraction: $w / 100.0,
            avg_request_size: $size,
            avg_access_count: $cnt,
            unique_requests: $uniq,
        }
    };
}

pub const MSRC_PROFILES: [AnalogProfile; 14] = [
    profile!("hm_1", 4.7, 15.2, 44.5, 6265),
    profile!("mds_0", 88.1, 9.6, 3.5, 31933),
    profile!("prn_1", 24.7, 20.0, 2.6, 6891),
    profile!("proj_0", 87.5, 38.0, 48.3, 1381),
    profile!("proj_2", 12.4, 42.4, 2.9, 27967),
    profile!("proj_3", 5.2, 9.6, 3.6, 19397),
    profile!("prxy_0", 96.9, 7.2, 95.7, 525),
    profile!("prxy_1", 34.5, 12.8, 150.1, 6845),
    profile!("rsrch_0", 90.7, 9.2, 34.7, 5504),
    profile!("src1_0", 43.6, 43.2, 12.7, 13640),
    profile!("stg_1", 36.3, 40.8, 1.1, 3787),
    profile!("usr_0", 59.6, 22.8, 19.7, 2138),
    profile!("wdev_2", 99.9, 8.0, 17.7, 4270),
    profile!("web_1", 45.9, 29.6, 1.2, 6095),
];

/// Fenwick tree over extent popularity weights.
struct WeightTree {
    tree: Vec<f64>,
}

impl WeightTree {
    fn new(n: usize) -> Self {
        Self { tree: vec![0.0; n + 1] }
    }

    fn add(&mut self, idx: usize, w: f64) {
        let mut i = idx + 1;
        while i < self.tree.len() {
            self.tree[i] += w;
            i += i & i.wrapping_neg();
        }
    }

    fn total(&self, upto: usize) -> f64 {
        let mut i = upto;
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }

    /// Smallest index whose prefix sum exceeds `target`.
    fn find(&self, mut target: f64) -> usize {
        let mut pos = 0;
        let mut step = self.tree.len().next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next < self.tree.len() && self.tree[next] <= target {
                pos = next;
                target -= self.tree[next];
            }
            step >>= 1;
        }
        pos
    }
}

fn geometric_size(rng: &mut impl Rng, mean: f64) -> u32 {
    if mean <= 1.0 {
        return 1;
    }
    let p = 1.0 / mean;
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    let extra = (u.ln() / (1.0 - p).ln()).floor();
    (1.0 + extra).min(f64::from(MAX_EXTENT_PAGES)) as u32
}

/// Generate `n_requests` requests shaped like `profile`.
pub fn gen_analog(profile: &AnalogProfile, n_requests: usize, seed: u64) -> Vec<StorageRequest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_requests.max(1);
    let extents = ((n as f64 / profile.avg_access_count).round() as usize).clamp(1, n);
    // Geometric sizes are truncated at MAX_EXTENT_PAGES; nudge the mean so the
    // truncated mean lands on the target.
    let target = profile.avg_request_size;
    let mut mean = target;
    for _ in 0..30 {
        let p = 1.0 / mean;
        let cap = f64::from(MAX_EXTENT_PAGES);
        let truncated = (1.0 - (1.0 - p).powf(cap)) / p;
        mean *= target / truncated;
    }

    // Popularity rank of each extent is a random permutation of 1..=E.
    let mut ranks: Vec<usize> = (1..=extents).collect();
    for i in (1..extents).rev() {
        let j = rng.gen_range(0..=i);
        ranks.swap(i, j);
    }

    // The most popular extents carry most of the requests, so their sizes are
    // pinned to the target mean instead of drawn.
    let mut starts = Vec::with_capacity(extents);
    let mut sizes = Vec::with_capacity(extents);
    let mut next_page = 0u64;
    for &rank in &ranks {
        let s = if rank <= PINNED_RANKS {
            let base = target.floor();
            (base as u32 + u32::from(rng.gen_bool(target - base))).max(1)
        } else {
            geometric_size(&mut rng, mean)
        };
        starts.push(next_page);
        sizes.push(s);
        next_page += u64::from(s);
    }

    let mut weights = WeightTree::new(extents);
    let mut introduced = 0usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let remaining_slots = n - i;
        let remaining_new = extents - introduced;
        let fresh = introduced == 0 || rng.gen_range(0..remaining_slots) < remaining_new;
        let ext = if fresh {
            let e = introduced;
            weights.add(e, (ranks[e] as f64).powf(-ZIPF_EXPONENT));
            introduced += 1;
            e
        } else {
            let total = weights.total(introduced);
            let e = weights.find(rng.gen_range(0.0..total));
            e.min(introduced - 1)
        };
        let op = if rng.gen_bool(profile.write_fraction) {
            Op::Write
        } else {
            Op::Read
        };
        out.push(StorageRequest::new(i as u64 * GAP_NS, op, starts[ext], sizes[ext]));
    }
    out
}
