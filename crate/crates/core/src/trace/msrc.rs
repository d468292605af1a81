//! MSR Cambridge block trace CSV.
//!
//! `Timestamp,Hostname,DiskNumber,Type,Offset,Size,ResponseTime`, one request
//! per line. Timestamps are Windows filetime ticks (100 ns); offset and size
//! are in bytes. Hostname, disk number and response time are ignored.

use std::io::{BufRead, Write};

use super::{Op, StorageRequest, TraceError, PAGE_SIZE};

const TICK_NS: u64 = 100;

pub fn parse_msrc_str(text: &str) -> Result<Vec<StorageRequest>, TraceError> {
    parse_msrc(text.as_bytes())
}

/// Parse a whole trace. Timestamps are rebased so the earliest request is at 0.
pub fn parse_msrc<R: BufRead>(reader: R) -> Result<Vec<StorageRequest>, TraceError> {
    let mut raw: Vec<(u64, StorageRequest)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        raw.push(parse_line(trimmed, line_no)?);
    }
    let Some(base) = raw.iter().map(|(ticks, _)| *ticks).min() else {
        return Ok(Vec::new());
    };
    let mut out: Vec<StorageRequest> = raw
        .into_iter()
        .map(|(ticks, mut r)| {
            r.timestamp_ns = (ticks - base) * TICK_NS;
            r
        })
        .collect();
    out.sort_by_key(|r| r.timestamp_ns);
    Ok(out)
}

fn parse_line(line: &str, line_no: usize) -> Result<(u64, StorageRequest), TraceError> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 7 {
        return Err(TraceError::Parse {
            line: line_no,
            message: format!("expected 7 fields, found {}", fields.len()),
        });
    }
    let number = |i: usize, what: &str| -> Result<u64, TraceError> {
        fields[i].parse::<u64>().map_err(|e| TraceError::Parse {
            line: line_no,
            message: format!("{what} `{}`: {e}", fields[i]),
        })
    };
    let ticks = number(0, "timestamp")?;
    let op = if fields[3].eq_ignore_ascii_case("read") {
        Op::Read
    } else if fields[3].eq_ignore_ascii_case("write") {
        Op::Write
    } else {
        return Err(TraceError::UnknownOp {
            line: line_no,
            token: fields[3].to_string(),
        });
    };
    let offset = number(4, "offset")?;
    let size = number(5, "size")?;
    let size_pages = size.div_ceil(PAGE_SIZE).max(1);
    let size_pages = u32::try_from(size_pages).map_err(|_| TraceError::Parse {
        line: line_no,
        message: format!("size {size} too large"),
    })?;
    Ok((ticks, StorageRequest::new(0, op, offset / PAGE_SIZE, size_pages)))
}

/// Write requests back out as MSRC CSV (tick-aligned, page-aligned).
pub fn write_msrc<W: Write>(requests: &[StorageRequest], mut out: W) -> std::io::Result<()> {
    for r in requests {
        let kind = match r.op {
            Op::Read => "Read",
            Op::Write => "Write",
        };
        writeln!(
            out,
            "{},tierwise,{},{},{},{},0",
            r.timestamp_ns / TICK_NS,
            r.workload_id,
            kind,
            r.page * PAGE_SIZE,
            u64::from(r.size_pages) * PAGE_SIZE
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_and_rebases() {
        let reqs =
            parse_msrc_str("128166372003061629,hm,1,Read,8192,8192,559\n128166372003061729,hm,1,Write,4095,1,10\n")
                .unwrap();
        assert_eq!(reqs.len(), 2);
        assert_eq!(reqs[0].timestamp_ns, 0);
        assert_eq!(reqs[0].op, Op::Read);
        assert_eq!(reqs[0].page, 2);
        assert_eq!(reqs[0].size_pages, 2);
        assert_eq!(reqs[1].timestamp_ns, 10_000);
        assert_eq!(reqs[1].op, Op::Write);
        assert_eq!(reqs[1].page, 0);
        assert_eq!(reqs[1].size_pages, 1);
    }

    #[test]
    fn type_is_case_insensitive() {
        let reqs = parse_msrc_str("1,h,0,WRITE,0,4096,0\n2,h,0,read,0,4096,0").unwrap();
        assert_eq!(reqs[0].op, Op::Write);
        assert_eq!(reqs[1].op, Op::Read);
    }

    #[test]
    fn empty_stream_is_empty() {
        assert!(parse_msrc_str("").unwrap().is_empty());
        assert!(parse_msrc_str("\n\n").unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_msrc_str("1,h,0,Read,0,4096,0\n2,h,0,Read,zero,4096,0\n").unwrap_err();
        assert!(matches!(err, TraceError::Parse { line: 2, .. }), "{err}");
        let err = parse_msrc_str("1,h,0,Read,0\n").unwrap_err();
        assert!(matches!(err, TraceError::Parse { line: 1, .. }));
    }

    #[test]
    fn unknown_type_is_error() {
        let err = parse_msrc_str("1,h,0,Trim,0,4096,0\n").unwrap_err();
        assert!(matches!(err, TraceError::UnknownOp { line: 1, ref token } if token == "Trim"));
    }

    fn arb_requests() -> impl Strategy<Value = Vec<StorageRequest>> {
        prop::collection::vec((0u64..1_000, any::<bool>(), 0u64..1 << 30, 1u32..512), 1..64).prop_map(|items| {
            let mut t = 0;
            let mut out: Vec<StorageRequest> = items
                .into_iter()
                .map(|(gap, w, page, size)| {
                    t += gap * TICK_NS;
                    let op = if w { Op::Write } else { Op::Read };
                    StorageRequest::new(t, op, page, size)
                })
                .collect();
            let base = out[0].timestamp_ns;
            for r in &mut out {
                r.timestamp_ns -= base;
            }
            out
        })
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(reqs in arb_requests()) {
            let mut buf = Vec::new();
            write_msrc(&reqs, &mut buf).unwrap();
            let back = parse_msrc(buf.as_slice()).unwrap();
            prop_assert_eq!(back, reqs);
        }
    }
}
