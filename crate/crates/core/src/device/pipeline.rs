//! The per-round Brute/Copy/Wait loop over all chunks of a leaf structure.

use std::sync::Arc;

use super::QUEUE_A;
use super::{point_bytes, query_bytes, ChunkSource, ChunkTag, CommandKind, Device, KernelTask};
use crate::error::{Error, Result};
use crate::neighbors::NeighborList;
use crate::points::PointMatrix;
use crate::scheduler::ChunkPlan;

/// Scan rows `[lo, hi)` of the current chunk for query `query`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub query: u32,
    pub lo: usize,
    pub hi: usize,
}

/// Simulated-time accounting of one or more pipeline rounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineStats {
    pub rounds: u64,
    pub kernels: u64,
    pub copies: u64,
    pub stage_ns: u64,
    pub copy_ns: u64,
    pub compute_ns: u64,
    /// Host time from the start of the round to the final wait.
    pub elapsed_ns: u64,
}

impl PipelineStats {
    pub fn accumulate(&mut self, o: &PipelineStats) {
        self.rounds += o.rounds;
        self.kernels += o.kernels;
        self.copies += o.copies;
        self.stage_ns += o.stage_ns;
        self.copy_ns += o.copy_ns;
        self.compute_ns += o.compute_ns;
        self.elapsed_ns += o.elapsed_ns;
    }
}

impl Device {
    /// Processes every chunk of `plan` once: chunk `j`'s kernel runs on queue
    /// `j mod 2` while the next chunk is staged and copied through the other
    /// queue into the other chunk buffer; then the host waits for the kernel.
    /// After the last chunk, chunk 1 is copied again so the next round can
    /// start without a transfer.
    ///
    /// `work[j]` lists the clipped row ranges to scan in chunk `j`; each query
    /// appears at most once per chunk. `lists` is indexed by query.
    pub fn run_chunk_pipeline(
        &mut self,
        source: &dyn ChunkSource,
        plan: &ChunkPlan,
        queries: &Arc<PointMatrix>,
        work: Vec<Vec<Assignment>>,
        lists: &mut [NeighborList],
    ) -> Result<PipelineStats> {
        if plan.n() != source.len() {
            return Err(Error::InvalidArgument(format!(
                "chunk plan covers {} rows, source has {}",
                plan.n(),
                source.len()
            )));
        }
        if work.len() != plan.len() {
            return Err(Error::InvalidArgument(format!(
                "{} work lists for {} chunks",
                work.len(),
                plan.len()
            )));
        }
        if queries.d() != source.dim() {
            return Err(Error::DimensionMismatch {
                expected: source.dim(),
                actual: queries.d(),
            });
        }
        if lists.len() != queries.n() {
            return Err(Error::InvalidArgument(format!(
                "{} neighbor lists for {} queries",
                lists.len(),
                queries.n()
            )));
        }
        let k = lists.iter().map(|l| l.k()).max().unwrap_or(0);
        let required = queries.n() as u64 * query_bytes(queries.d(), k);
        if required > self.query_block_bytes {
            return Err(Error::CapacityExceeded {
                required: required + 2 * self.chunk_bytes,
                available: self.spec.memory_capacity,
            });
        }
        let max_rows = plan.max_chunk_len();
        let max_bytes = max_rows as u64 * point_bytes(source.dim());
        if max_bytes > self.chunk_bytes {
            let per_chunk = self.chunk_capacity_rows(source.dim());
            return Err(Error::ChunkTooLarge {
                rows: max_rows,
                bytes: max_bytes,
                capacity: self.chunk_bytes,
                min_chunks: if per_chunk == 0 {
                    usize::MAX
                } else {
                    plan.n().div_ceil(per_chunk)
                },
            });
        }

        self.host.round += 1;
        let trace_mark = self.shared.trace.lock().unwrap().len();
        let round_start = self.host.clock;
        let sid = source.source_id();
        let tag_of = |j: usize| {
            let (lo, hi) = plan.bounds(j);
            ChunkTag {
                source: sid,
                lo,
                hi,
            }
        };
        let chunks = plan.len();
        let mut stats = PipelineStats {
            rounds: 1,
            ..Default::default()
        };

        let first = tag_of(0);
        let resident = self
            .host
            .restaged
            .filter(|&b| self.host.buffer_tag[b] == Some(first))
            .or_else(|| (0..2).find(|&b| self.host.buffer_tag[b] == Some(first)));
        let mut buf = match resident {
            Some(b) => b,
            None => {
                self.finish()?;
                self.stage(0, source, first.lo, first.hi, QUEUE_A, 1)?;
                self.enqueue_copy(QUEUE_A, 0, 0, 1)?;
                stats.copies += 1;
                0
            }
        };

        for (j, items) in work.iter().enumerate() {
            let queue = j % 2;
            let other = 1 - queue;
            let deps: Vec<_> = self.writer_event(buf).into_iter().collect();
            let tasks: Vec<KernelTask> = items
                .iter()
                .map(|a| KernelTask {
                    query: a.query,
                    lo: a.lo,
                    hi: a.hi,
                    list: std::mem::take(&mut lists[a.query as usize]),
                })
                .collect();
            let kernel = self.enqueue_brute_kernel(
                queue,
                buf,
                (j + 1) as u32,
                queries.clone(),
                tasks,
                &deps,
            )?;
            stats.kernels += 1;

            let next = (j + 1) % chunks;
            let nt = tag_of(next);
            let staged = self
                .stage(1 - buf, source, nt.lo, nt.hi, other, (next + 1) as u32)
                .and_then(|_| self.enqueue_copy(other, 1 - buf, 1 - buf, (next + 1) as u32));
            let waited = self.wait(&kernel.event);
            staged?;
            waited?;
            stats.copies += 1;
            let done = kernel
                .take_tasks()
                .ok_or_else(|| Error::Contract("kernel finished without results".into()))?;
            for t in done {
                lists[t.query as usize] = t.list;
            }
            buf = 1 - buf;
        }
        // `buf` now names the buffer receiving chunk 1 for the next round.
        self.host.restaged = Some(buf);
        stats.elapsed_ns = self.host.clock - round_start;

        let trace = self.shared.trace.lock().unwrap();
        for r in &trace[trace_mark..] {
            let len = r.end_ns - r.start_ns;
            match r.kind {
                CommandKind::Stage => stats.stage_ns += len,
                CommandKind::Copy => stats.copy_ns += len,
                CommandKind::Compute => stats.compute_ns += len,
                CommandKind::Marker => {}
            }
        }
        Ok(stats)
    }
}
