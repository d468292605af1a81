use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Op, StorageRequest, TraceError};

/// Inter-arrival gap of generated streams.
const GAP_NS: u64 = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SizeDist {
    Fixed { pages: u32 },
    Uniform { min: u32, max: u32 },
}

impl Default for SizeDist {
    fn default() -> Self {
        SizeDist::Fixed { pages: 1 }
    }
}

impl SizeDist {
    fn max_pages(&self) -> u32 {
        match *self {
            SizeDist::Fixed { pages } => pages,
            SizeDist::Uniform { max, .. } => max,
        }
    }

    fn validate(&self) -> Result<(), TraceError> {
        match *self {
            SizeDist::Fixed { pages } if pages >= 1 => Ok(()),
            SizeDist::Uniform { min, max } if min >= 1 && min <= max => Ok(()),
            other => Err(TraceError::InvalidSpec(format!("bad size distribution {other:?}"))),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> u32 {
        match *self {
            SizeDist::Fixed { pages } => pages,
            SizeDist::Uniform { min, max } => rng.gen_range(min..=max),
        }
    }
}

/// Hot/cold page-popularity stream.
///
/// Pages are grouped into slots `size.max_pages()` wide; the first
/// `hot_page_count` slots are hot. Each request picks the hot set with
/// probability `hot_access_fraction`, then a slot uniformly inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_requests: usize,
    pub hot_page_count: u64,
    pub cold_page_count: u64,
    pub hot_access_fraction: f64,
    pub write_fraction: f64,
    #[serde(default)]
    pub request_size: SizeDist,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Whether `page` lies in one of the hot slots.
    pub fn is_hot_page(&self, page: u64) -> bool {
        page / u64::from(self.request_size.max_pages()) < self.hot_page_count
    }

    fn validate(&self) -> Result<(), TraceError> {
        let frac_ok = |f: f64| (0.0..=1.0).contains(&f);
        if !frac_ok(self.hot_access_fraction) || !frac_ok(self.write_fraction) {
            return Err(TraceError::InvalidSpec("fractions must lie in [0, 1]".into()));
        }
        if self.hot_page_count + self.cold_page_count == 0 {
            return Err(TraceError::InvalidSpec("no pages to access".into()));
        }
        if self.hot_page_count == 0 && self.hot_access_fraction > 0.0 {
            return Err(TraceError::InvalidSpec(
                "hot accesses requested but no hot pages".into(),
            ));
        }
        if self.cold_page_count == 0 && self.hot_access_fraction < 1.0 {
            return Err(TraceError::InvalidSpec(
                "cold accesses requested but no cold pages".into(),
            ));
        }
        self.request_size.validate()
    }
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Vec<StorageRequest>, TraceError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let stride = u64::from(spec.request_size.max_pages());
    let out = (0..spec.n_requests)
        .map(|i| {
            let slot = if rng.gen_bool(spec.hot_access_fraction) {
                rng.gen_range(0..spec.hot_page_count)
            } else {
                spec.hot_page_count + rng.gen_range(0..spec.cold_page_count)
            };
            let op = if rng.gen_bool(spec.write_fraction) {
                Op::Write
            } else {
                Op::Read
            };
            let size = spec.request_size.sample(&mut rng);
            StorageRequest::new(i as u64 * GAP_NS, op, slot * stride, size)
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, hot: u64, cold: u64, frac: f64) -> SyntheticSpec {
        SyntheticSpec {
            n_requests: n,
            hot_page_count: hot,
            cold_page_count: cold,
            hot_access_fraction: frac,
            write_fraction: 0.3,
            request_size: SizeDist::Fixed { pages: 1 },
            seed: 7,
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let s = spec(1000, 1, 1, 0.9);
        assert_eq!(gen_synthetic(&s).unwrap(), gen_synthetic(&s).unwrap());
        let other = SyntheticSpec { seed: 8, ..s.clone() };
        assert_ne!(gen_synthetic(&s).unwrap(), gen_synthetic(&other).unwrap());
    }

    #[test]
    fn all_hot() {
        let s = spec(500, 2, 10, 1.0);
        assert!(gen_synthetic(&s).unwrap().iter().all(|r| s.is_hot_page(r.page)));
    }

    #[test]
    fn hot_share_matches_fraction() {
        for frac in [0.1, 0.5, 0.9] {
            let s = spec(10_000, 3, 20, frac);
            let reqs = gen_synthetic(&s).unwrap();
            let hot = reqs.iter().filter(|r| s.is_hot_page(r.page)).count();
            let share = hot as f64 / reqs.len() as f64;
            assert!((share - frac).abs() <= 0.02, "frac {frac}: share {share}");
        }
    }

    #[test]
    fn zero_pages_is_error() {
        assert!(gen_synthetic(&spec(10, 0, 0, 0.5)).is_err());
        assert!(gen_synthetic(&spec(10, 0, 5, 0.5)).is_err());
        assert!(gen_synthetic(&spec(10, 1, 1, 1.5)).is_err());
    }

    #[test]
    fn multi_page_requests_stay_in_slot() {
        let s = SyntheticSpec {
            request_size: SizeDist::Uniform { min: 1, max: 8 },
            ..spec(2000, 2, 6, 0.5)
        };
        for r in gen_synthetic(&s).unwrap() {
            assert_eq!(r.page % 8, 0);
            assert!(r.size_pages <= 8);
        }
    }
}
