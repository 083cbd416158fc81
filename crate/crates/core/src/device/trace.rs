//! Timeline records of simulated device activity and the overlap audit.

use std::io::{self, BufRead, Write};

use super::event::CommandKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub kind: CommandKind,
    pub queue: usize,
    /// 1-based chunk index within its pipeline round.
    pub chunk: u32,
    pub start_ns: u64,
    pub end_ns: u64,
    /// Pipeline round the record belongs to. Not exported.
    pub round: u64,
}

/// Writes records as `kind,queue,chunk,start_ns,end_ns` lines.
pub fn write_trace<W: Write>(records: &[TraceRecord], mut w: W) -> io::Result<()> {
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.kind.as_str(),
            r.queue,
            r.chunk,
            r.start_ns,
            r.end_ns
        )?;
    }
    Ok(())
}

/// Parses lines produced by [`write_trace`]. Round information is lost.
pub fn read_trace<R: BufRead>(r: R) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Parse {
            path: "<trace>".into(),
            location: format!("line {}", lineno + 1),
            message: m.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        out.push(TraceRecord {
            kind: CommandKind::parse(f[0]).ok_or_else(|| bad("unknown command kind"))?,
            queue: f[1].parse().map_err(|_| bad("bad queue id"))?,
            chunk: f[2].parse().map_err(|_| bad("bad chunk id"))?,
            start_ns: f[3].parse().map_err(|_| bad("bad start"))?,
            end_ns: f[4].parse().map_err(|_| bad("bad end"))?,
            round: 0,
        });
    }
    Ok(out)
}

/// A chunk whose transfer did not begin before its predecessor's kernel ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapMiss {
    pub round: u64,
    pub chunk: u32,
    pub copy_start_ns: u64,
    pub prev_compute_end_ns: u64,
}

/// Start of the copy phase of `chunk` in `round`: the host staging step if
/// recorded, else the device transfer.
fn copy_phase_start(records: &[TraceRecord], round: u64, chunk: u32) -> Option<u64> {
    records
        .iter()
        .filter(|r| {
            r.round == round
                && r.chunk == chunk
                && matches!(r.kind, CommandKind::Stage | CommandKind::Copy)
        })
        .map(|r| r.start_ns)
        .min()
}

/// For every round and every chunk `j >= 2` checks that the copy phase of `j`
/// started before the kernel of chunk `j - 1` ended. Rounds are identified by
/// the `round` field, so this only works on in-memory traces.
pub fn overlap_audit(records: &[TraceRecord]) -> (usize, Vec<OverlapMiss>) {
    let mut checked = 0;
    let mut misses = Vec::new();
    for prev in records.iter().filter(|r| r.kind == CommandKind::Compute) {
        let chunk = prev.chunk + 1;
        let has_next = records
            .iter()
            .any(|r| r.kind == CommandKind::Compute && r.round == prev.round && r.chunk == chunk);
        if !has_next {
            continue;
        }
        checked += 1;
        match copy_phase_start(records, prev.round, chunk) {
            Some(s) if s < prev.end_ns => {}
            s => misses.push(OverlapMiss {
                round: prev.round,
                chunk,
                copy_start_ns: s.unwrap_or(u64::MAX),
                prev_compute_end_ns: prev.end_ns,
            }),
        }
    }
    (checked, misses)
}

/// Sum of the lengths of `kind` records.
pub fn total_ns(records: &[TraceRecord], kind: CommandKind) -> u64 {
    records
        .iter()
        .filter(|r| r.kind == kind)
        .map(|r| r.end_ns - r.start_ns)
        .sum()
}
