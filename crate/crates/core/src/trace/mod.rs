//! Block-I/O request streams: parsing, mixing, synthesis and workload statistics.

mod analog;
mod msrc;
mod synthetic;

use std::collections::{HashMap, HashSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analog::{gen_analog, AnalogProfile, MSRC_PROFILES};
pub use msrc::{parse_msrc, parse_msrc_str, write_msrc};
pub use synthetic::{gen_synthetic, SizeDist, SyntheticSpec};

/// Placement and metadata granularity, in bytes.
pub const PAGE_SIZE: u64 = 4096;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown request type `{token}`")]
    UnknownOp { line: usize, token: String },
    #[error("workload statistics need at least one request")]
    Empty,
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("{traces} traces but {offsets} start offsets")]
    OffsetMismatch { traces: usize, offsets: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Read,
    Write,
}

impl Op {
    pub fn is_write(self) -> bool {
        matches!(self, Op::Write)
    }
}

/// One block-I/O event in page units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageRequest {
    pub timestamp_ns: u64,
    pub op: Op,
    pub page: u64,
    pub size_pages: u32,
    pub workload_id: u16,
}

impl StorageRequest {
    pub fn new(timestamp_ns: u64, op: Op, page: u64, size_pages: u32) -> Self {
        assert!(size_pages >= 1, "requests cover at least one page");
        Self {
            timestamp_ns,
            op,
            page,
            size_pages,
            workload_id: 0,
        }
    }

    pub fn pages(&self) -> Range<u64> {
        self.page..self.end_page()
    }

    /// One past the last covered page.
    pub fn end_page(&self) -> u64 {
        self.page + u64::from(self.size_pages)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadStats {
    pub requests: usize,
    pub write_fraction: f64,
    pub read_fraction: f64,
    pub avg_request_size_pages: f64,
    /// Mean over touched pages of their access count.
    pub avg_access_count: f64,
    pub unique_pages: usize,
    /// Distinct `(page, size)` request keys.
    pub unique_requests: usize,
}

impl WorkloadStats {
    pub fn is_write_intensive(&self) -> bool {
        self.write_fraction > 0.5
    }
}

pub fn workload_stats(requests: &[StorageRequest]) -> Result<WorkloadStats, TraceError> {
    if requests.is_empty() {
        return Err(TraceError::Empty);
    }
    let n = requests.len();
    let writes = requests.iter().filter(|r| r.op.is_write()).count();
    let mut touches: HashMap<u64, u64> = HashMap::new();
    let mut keys = HashSet::new();
    let mut total_pages = 0u64;
    for r in requests {
        total_pages += u64::from(r.size_pages);
        keys.insert((r.page, r.size_pages));
        for p in r.pages() {
            *touches.entry(p).or_default() += 1;
        }
    }
    let unique_pages = touches.len();
    Ok(WorkloadStats {
        requests: n,
        write_fraction: writes as f64 / n as f64,
        read_fraction: (n - writes) as f64 / n as f64,
        avg_request_size_pages: total_pages as f64 / n as f64,
        avg_access_count: total_pages as f64 / unique_pages as f64,
        unique_pages,
        unique_requests: keys.len(),
    })
}

/// Statistics split by `workload_id`, in ascending id order.
pub fn workload_stats_by_id(requests: &[StorageRequest]) -> Result<Vec<(u16, WorkloadStats)>, TraceError> {
    let mut ids: Vec<u16> = requests.iter().map(|r| r.workload_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|id| {
            let part: Vec<_> = requests.iter().filter(|r| r.workload_id == id).copied().collect();
            workload_stats(&part).map(|s| (id, s))
        })
        .collect()
}

/// Number of distinct pages a stream touches.
pub fn working_set_pages(requests: &[StorageRequest]) -> usize {
    let mut pages = HashSet::new();
    for r in requests {
        pages.extend(r.pages());
    }
    pages.len()
}

/// Merge independently recorded streams.
///
/// Each stream is shifted by its start offset, moved into its own contiguous
/// page region and tagged with its index as `workload_id`. The result is
/// sorted by timestamp; ties keep stream order.
pub fn mix_traces(traces: &[Vec<StorageRequest>], start_offsets_ns: &[u64]) -> Result<Vec<StorageRequest>, TraceError> {
    if traces.len() != start_offsets_ns.len() {
        return Err(TraceError::OffsetMismatch {
            traces: traces.len(),
            offsets: start_offsets_ns.len(),
        });
    }
    let mut merged = Vec::with_capacity(traces.iter().map(Vec::len).sum());
    let mut region_base = 0u64;
    for (id, (trace, &offset)) in traces.iter().zip(start_offsets_ns).enumerate() {
        let Some(lo) = trace.iter().map(|r| r.page).min() else {
            continue;
        };
        let hi = trace.iter().map(StorageRequest::end_page).max().unwrap_or(lo);
        merged.extend(trace.iter().map(|r| StorageRequest {
            timestamp_ns: r.timestamp_ns + offset,
            page: region_base + (r.page - lo),
            workload_id: id as u16,
            ..*r
        }));
        region_base += hi - lo;
    }
    merged.sort_by_key(|r| r.timestamp_ns);
    Ok(merged)
}
