//! Binned observation vector and its packed encoding.
//!
//! Field layout, least significant bits first:
//!
//! | field   | bins        | bits | offset |
//! |---------|-------------|------|--------|
//! | size    | 8           | 8    | 0      |
//! | type    | 2           | 4    | 8      |
//! | intr    | 64          | 8    | 12     |
//! | cnt     | 64          | 8    | 20     |
//! | cap     | 8           | 8    | 28     |
//! | curr    | tiers (≤16) | 4    | 36     |
//! | mid cap | 8           | 8    | 40     |
//!
//! The last field only exists on systems with three or more tiers, which
//! makes the packed state 48 bits wide instead of 40.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hssenv::RawFeatures;
use crate::trace::Op;

pub const SIZE_BINS: u8 = 8;
pub const TYPE_BINS: u8 = 2;
pub const INTERVAL_BINS: u8 = 64;
pub const COUNT_BINS: u8 = 64;
pub const CAP_BINS: u8 = 8;
pub const MAX_TIERS: usize = 16;

const WIDTHS: [u32; 7] = [8, 4, 8, 8, 8, 4, 8];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("field `{field}` holds {value}, but only {bins} bins exist")]
    OutOfRange { field: &'static str, value: u64, bins: u64 },
    #[error("code has bits set above bit {0}")]
    TooWide(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObservationVector {
    pub size_bin: u8,
    pub type_bin: u8,
    pub intr_bin: u8,
    pub cnt_bin: u8,
    pub cap_bin: u8,
    pub curr_bin: u8,
    /// Remaining capacity of the middle tier; `Some` iff three or more tiers.
    pub mid_cap_bin: Option<u8>,
}

/// Shape of the observation for a given tier count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsLayout {
    pub n_tiers: usize,
}

impl ObsLayout {
    pub fn new(n_tiers: usize) -> Self {
        assert!((2..=MAX_TIERS).contains(&n_tiers));
        Self { n_tiers }
    }

    pub fn has_mid_cap(&self) -> bool {
        self.n_tiers >= 3
    }

    /// Network input width.
    pub fn dims(&self) -> usize {
        if self.has_mid_cap() {
            7
        } else {
            6
        }
    }

    pub fn packed_bits(&self) -> u32 {
        WIDTHS[..self.dims()].iter().sum()
    }

    fn bins(&self) -> [u64; 7] {
        [
            SIZE_BINS.into(),
            TYPE_BINS.into(),
            INTERVAL_BINS.into(),
            COUNT_BINS.into(),
            CAP_BINS.into(),
            self.n_tiers as u64,
            CAP_BINS.into(),
        ]
    }
}

const NAMES: [&str; 7] = ["size", "type", "intr", "cnt", "cap", "curr", "mid_cap"];

fn log2_floor_plus_one(x: u64) -> u8 {
    // floor(log2(x + 1))
    (63 - (x.saturating_add(1)).leading_zeros()) as u8
}

pub fn size_bin(size_pages: u32) -> u8 {
    if size_pages <= 1 {
        0
    } else {
        // ceil(log2(size)): 2 -> 1, 3..=4 -> 2, 5..=8 -> 3, ...
        let bits = 32 - (size_pages - 1).leading_zeros();
        (bits as u8).min(SIZE_BINS - 1)
    }
}

pub fn interval_bin(interval: Option<u64>) -> u8 {
    interval.map_or(INTERVAL_BINS - 1, |i| log2_floor_plus_one(i).min(INTERVAL_BINS - 1))
}

pub fn count_bin(count: u64) -> u8 {
    log2_floor_plus_one(count).min(COUNT_BINS - 1)
}

pub fn capacity_bin(remaining_fraction: f64) -> u8 {
    ((remaining_fraction.clamp(0.0, 1.0) * f64::from(CAP_BINS)).floor() as u8).min(CAP_BINS - 1)
}

pub fn observe(raw: &RawFeatures) -> ObservationVector {
    let slowest = (raw.n_tiers - 1) as u8;
    ObservationVector {
        size_bin: size_bin(raw.size_pages),
        type_bin: u8::from(raw.op == Op::Write),
        intr_bin: interval_bin(raw.access_interval),
        cnt_bin: count_bin(raw.access_count),
        cap_bin: capacity_bin(raw.fast_remaining_fraction),
        curr_bin: raw.current_tier.map_or(slowest, |t| t as u8),
        mid_cap_bin: (raw.n_tiers >= 3).then(|| capacity_bin(raw.mid_remaining_fraction.unwrap_or(1.0))),
    }
}

impl ObservationVector {
    fn fields(&self) -> [u64; 7] {
        [
            self.size_bin.into(),
            self.type_bin.into(),
            self.intr_bin.into(),
            self.cnt_bin.into(),
            self.cap_bin.into(),
            self.curr_bin.into(),
            self.mid_cap_bin.unwrap_or(0).into(),
        ]
    }

    pub fn validate(&self, layout: ObsLayout) -> Result<(), CodecError> {
        if self.mid_cap_bin.is_some() != layout.has_mid_cap() {
            return Err(CodecError::OutOfRange {
                field: "mid_cap",
                value: u64::from(self.mid_cap_bin.unwrap_or(0)),
                bins: if layout.has_mid_cap() { 8 } else { 0 },
            });
        }
        let bins = layout.bins();
        for (i, v) in self.fields().into_iter().enumerate().take(layout.dims()) {
            if v >= bins[i] {
                return Err(CodecError::OutOfRange {
                    field: NAMES[i],
                    value: v,
                    bins: bins[i],
                });
            }
        }
        Ok(())
    }

    pub fn pack(&self, layout: ObsLayout) -> Result<u64, CodecError> {
        self.validate(layout)?;
        let mut code = 0u64;
        let mut shift = 0;
        for (i, v) in self.fields().into_iter().enumerate().take(layout.dims()) {
            code |= v << shift;
            shift += WIDTHS[i];
        }
        Ok(code)
    }

    pub fn unpack(code: u64, layout: ObsLayout) -> Result<Self, CodecError> {
        let bits = layout.packed_bits();
        if code >> bits != 0 {
            return Err(CodecError::TooWide(bits));
        }
        let mut vals = [0u8; 7];
        let mut shift = 0;
        for (i, v) in vals.iter_mut().enumerate().take(layout.dims()) {
            *v = ((code >> shift) & ((1 << WIDTHS[i]) - 1)) as u8;
            shift += WIDTHS[i];
        }
        let obs = ObservationVector {
            size_bin: vals[0],
            type_bin: vals[1],
            intr_bin: vals[2],
            cnt_bin: vals[3],
            cap_bin: vals[4],
            curr_bin: vals[5],
            mid_cap_bin: layout.has_mid_cap().then_some(vals[6]),
        };
        obs.validate(layout)?;
        Ok(obs)
    }

    /// Every bin index scaled into `[0, 1]`.
    pub fn normalize(&self, layout: ObsLayout) -> Vec<f64> {
        let bins = layout.bins();
        self.fields()
            .into_iter()
            .zip(bins)
            .take(layout.dims())
            .map(|(v, b)| v as f64 / (b - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureBins {
    pub name: &'static str,
    pub bins: u64,
    pub bits: u32,
    pub offset: u32,
    pub rule: &'static str,
    /// Inclusive lower edge of each bin in raw units, where meaningful.
    pub lower_edges: Vec<f64>,
}

/// Binning rules for audit dumps.
pub fn bin_boundaries(layout: ObsLayout) -> Vec<FeatureBins> {
    let pow2 = |n: u32| (0..n).map(|b| (1u64 << b) as f64 - 1.0).collect::<Vec<_>>();
    let mut size_edges = vec![1.0];
    size_edges.extend((0..7).map(|b| ((1u64 << b) + 1) as f64));
    let cap_edges = (0..8).map(|b| f64::from(b) / 8.0).collect::<Vec<_>>();
    let rules: [(&str, Vec<f64>); 7] = [
        ("ceil(log2(size_pages)), clamped to 7", size_edges),
        ("0 = read, 1 = write", vec![0.0, 1.0]),
        ("floor(log2(interval + 1)), clamped to 63; first touch -> 63", pow2(64)),
        ("floor(log2(count + 1)), clamped to 63", pow2(64)),
        ("floor(remaining_fraction * 8), clamped to 7", cap_edges.clone()),
        (
            "tier index, unplaced -> slowest tier",
            (0..layout.n_tiers).map(|t| t as f64).collect(),
        ),
        ("floor(mid_remaining_fraction * 8), clamped to 7", cap_edges),
    ];
    let bins = layout.bins();
    let mut offset = 0;
    rules
        .into_iter()
        .enumerate()
        .take(layout.dims())
        .map(|(i, (rule, lower_edges))| {
            let f = FeatureBins {
                name: NAMES[i],
                bins: bins[i],
                bits: WIDTHS[i],
                offset,
                rule,
                lower_edges,
            };
            offset += WIDTHS[i];
            f
        })
        .collect()
}
