//! Lazy batched search: queries are advanced through the top tree in batches,
//! parked in per-leaf buffers, and scanned in bulk on the device.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::tree::{BufferKdTree, TopTree};
use crate::device::{cpu_timed, par_for_each_timed, Assignment, Device, PipelineStats};
use crate::error::{Error, Result};
use crate::kdtree::must_visit;
use crate::neighbors::{NeighborList, SearchParams};
use crate::points::PointMatrix;
use crate::scheduler::ChunkPlan;

/// Buffer sizing and fetch policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BufferConfig {
    /// Query indices one leaf buffer holds (B).
    pub buffer_capacity: usize,
    /// Indices taken from the queues per iteration (M).
    pub fetch_size: usize,
    /// Fill level at which all buffers are processed.
    pub half_full_threshold: usize,
    /// Keep every query's sequence of visited leaves.
    pub record_visits: bool,
}

impl BufferConfig {
    pub const DEFAULT_FETCH_MULTIPLE: usize = 10;

    /// `B = 2^(24 - h)`, `M = 10 B`, threshold `B / 2`.
    pub fn for_height(h: usize) -> Self {
        Self::with_capacity(
            1usize << 24usize.saturating_sub(h),
            Self::DEFAULT_FETCH_MULTIPLE,
        )
    }

    /// `B = capacity`, `M = fetch_multiple * B`, threshold `B / 2` (at least 1).
    pub fn with_capacity(capacity: usize, fetch_multiple: usize) -> Self {
        Self {
            buffer_capacity: capacity,
            fetch_size: capacity.saturating_mul(fetch_multiple),
            half_full_threshold: (capacity / 2).max(1),
            record_visits: false,
        }
    }

    pub fn recording_visits(mut self) -> Self {
        self.record_visits = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.buffer_capacity == 0 || self.fetch_size == 0 {
            return Err(Error::Config(
                "buffer capacity and fetch size must be >= 1".into(),
            ));
        }
        if self.half_full_threshold == 0 || self.half_full_threshold > self.buffer_capacity {
            return Err(Error::Config(format!(
                "half-full threshold {} outside [1, {}]",
                self.half_full_threshold, self.buffer_capacity
            )));
        }
        Ok(())
    }
}

/// Outcome of advancing one query: the next leaf to scan, or termination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafStep {
    Leaf(u32),
    Done,
}

impl LeafStep {
    /// `-1` for [`LeafStep::Done`], the leaf id otherwise.
    pub fn code(self) -> i64 {
        match self {
            LeafStep::Leaf(l) => l as i64,
            LeafStep::Done => -1,
        }
    }
}

/// Traversal state of one query. `stack` holds the internal nodes whose far
/// child has not been decided yet, root first; it never exceeds the height.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryState {
    pub stack: Vec<u32>,
    pub started: bool,
    pub done: bool,
    pub visits: Vec<u32>,
}

impl QueryState {
    /// Advances to the next leaf whose points must be scanned. `kth` is the
    /// query's current k-th squared distance.
    pub fn next_leaf(&mut self, top: &TopTree, q: &[f32], kth: f32, record: bool) -> LeafStep {
        if self.done {
            return LeafStep::Done;
        }
        let mut node = if !self.started {
            self.started = true;
            0
        } else {
            loop {
                let Some(n) = self.stack.pop() else {
                    self.done = true;
                    return LeafStep::Done;
                };
                let (_, far, plane) = top.children_for(n as usize, q);
                if must_visit(plane, kth) {
                    break far;
                }
            }
        };
        while top.is_internal(node) {
            self.stack.push(node as u32);
            node = top.children_for(node, q).0;
        }
        let leaf = top.leaf_id(node);
        if record {
            self.visits.push(leaf);
        }
        LeafStep::Leaf(leaf)
    }
}

/// Advances each listed query to its next leaf, in parallel. Also returns
/// the busiest lane's CPU time.
fn find_leaf_batch_timed(
    tree: &BufferKdTree,
    states: &mut [QueryState],
    lists: &[NeighborList],
    queries: &PointMatrix,
    indices: &[u32],
    record: bool,
) -> (Vec<LeafStep>, u64) {
    let mut work: Vec<(u32, QueryState, LeafStep)> = indices
        .iter()
        .map(|&i| (i, std::mem::take(&mut states[i as usize]), LeafStep::Done))
        .collect();
    let top = tree.top();
    let busy = par_for_each_timed(&mut work, |(i, st, out)| {
        let i = *i as usize;
        *out = st.next_leaf(top, queries.row(i), lists[i].kth_sq_dist(), record);
    });
    let mut steps = Vec::with_capacity(work.len());
    for (i, st, out) in work {
        states[i as usize] = st;
        steps.push(out);
    }
    (steps, busy)
}

/// Advances each query in `indices` until its next unscanned leaf or until
/// its traversal ends. Indices must be distinct.
pub fn find_leaf_batch(
    tree: &BufferKdTree,
    states: &mut [QueryState],
    lists: &[NeighborList],
    queries: &PointMatrix,
    indices: &[u32],
) -> Vec<LeafStep> {
    find_leaf_batch_timed(tree, states, lists, queries, indices, false).0
}

/// Fixed-capacity per-leaf buffers of query indices.
#[derive(Debug, Clone)]
pub struct QueryBuffers {
    capacity: usize,
    threshold: usize,
    bufs: Vec<Vec<u32>>,
    total: usize,
    at_threshold: usize,
}

impl QueryBuffers {
    pub fn new(leaves: usize, capacity: usize, threshold: usize) -> Self {
        Self {
            capacity,
            threshold,
            bufs: vec![Vec::new(); leaves],
            total: 0,
            at_threshold: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn fill(&self, leaf: u32) -> usize {
        self.bufs[leaf as usize].len()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn any_half_full(&self) -> bool {
        self.at_threshold > 0
    }

    pub fn contents(&self, leaf: u32) -> &[u32] {
        &self.bufs[leaf as usize]
    }

    /// Appends unless the buffer is full.
    pub fn try_insert(&mut self, leaf: u32, query: u32) -> bool {
        let b = &mut self.bufs[leaf as usize];
        if b.len() >= self.capacity {
            return false;
        }
        b.push(query);
        self.total += 1;
        if b.len() == self.threshold {
            self.at_threshold += 1;
        }
        true
    }

    /// Appends. Inserting into a full buffer is a scheduling bug and panics.
    pub fn insert(&mut self, leaf: u32, query: u32) {
        assert!(
            self.try_insert(leaf, query),
            "buffer overflow: leaf {leaf} already holds {} queries",
            self.capacity
        );
    }

    /// Empties every buffer, returning `(leaf, query)` pairs in leaf order.
    pub fn drain_all(&mut self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.total);
        for (leaf, b) in self.bufs.iter_mut().enumerate() {
            out.extend(b.drain(..).map(|q| (leaf as u32, q)));
        }
        self.total = 0;
        self.at_threshold = 0;
        out
    }
}

/// Queries that have not started, and queries waiting to continue.
#[derive(Debug, Clone, Default)]
pub struct QueryQueues {
    pub input: VecDeque<u32>,
    pub reinsert: VecDeque<u32>,
}

impl QueryQueues {
    pub fn new(m: usize) -> Self {
        Self {
            input: (0..m as u32).collect(),
            reinsert: VecDeque::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty() && self.reinsert.is_empty()
    }

    /// Takes up to `m` indices, draining `reinsert` before `input`.
    pub fn fetch(&mut self, m: usize) -> Vec<u32> {
        let from_reinsert = m.min(self.reinsert.len());
        let mut out: Vec<u32> = self.reinsert.drain(..from_reinsert).collect();
        let from_input = (m - from_reinsert).min(self.input.len());
        out.extend(self.input.drain(..from_input));
        out
    }
}

/// Result of one buffer-processing round.
#[derive(Debug, Clone, Default)]
pub struct ProcessOutcome {
    /// Queries whose traversal continues.
    pub reinsert: Vec<u32>,
    /// Queries whose traversal ended with this round.
    pub finished: Vec<u32>,
    /// `(query, leaf)` scans performed.
    pub leaf_scans: u64,
    pub pipeline: PipelineStats,
}

/// Empties all buffers and scans every buffered query against all points of
/// its leaf, chunk by chunk on `device`.
#[allow(clippy::too_many_arguments)]
pub fn process_all_buffers(
    tree: &BufferKdTree,
    buffers: &mut QueryBuffers,
    states: &mut [QueryState],
    lists: &mut [NeighborList],
    queries: &Arc<PointMatrix>,
    device: &mut Device,
    plan: &ChunkPlan,
) -> Result<ProcessOutcome> {
    debug_assert!(
        !buffers.is_empty(),
        "process_all_buffers called with empty buffers"
    );
    let ((drained, work), host_ns) = cpu_timed(|| {
        let drained = buffers.drain_all();
        let mut work: Vec<Vec<Assignment>> = vec![Vec::new(); plan.len()];
        for &(leaf, query) in &drained {
            let (l, r) = tree.leaves().bounds(leaf);
            for part in plan.assign(l, r) {
                work[part.chunk].push(Assignment {
                    query,
                    lo: part.lo,
                    hi: part.hi,
                });
            }
        }
        (drained, work)
    });
    device.advance_host(host_ns);
    let pipeline = device.run_chunk_pipeline(tree.leaves(), plan, queries, work, lists)?;
    let mut out = ProcessOutcome {
        leaf_scans: drained.len() as u64,
        pipeline,
        ..Default::default()
    };
    for (_, q) in drained {
        let st = &mut states[q as usize];
        if st.stack.is_empty() {
            st.done = true;
            out.finished.push(q);
        } else {
            out.reinsert.push(q);
        }
    }
    Ok(out)
}

/// Where every query currently is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Census {
    pub queries: usize,
    pub input: usize,
    pub reinsert: usize,
    pub buffered: usize,
    pub spilled: usize,
    pub done: usize,
}

impl Census {
    pub fn accounted(&self) -> usize {
        self.input + self.reinsert + self.buffered + self.spilled + self.done
    }
}

/// Counters and simulated times of a search.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SearchStats {
    pub iterations: u64,
    pub process_rounds: u64,
    pub leaf_scans: u64,
    /// Simulated host time spent advancing queries through the top tree.
    pub find_leaf_ns: u64,
    /// Simulated host time spent on queues, buffers and work assembly.
    pub buffer_ns: u64,
    pub stage_ns: u64,
    pub copy_ns: u64,
    pub compute_ns: u64,
    /// Simulated host time from start to finish.
    pub simulated_ns: u64,
    #[serde(skip)]
    pub wall: Duration,
}

impl SearchStats {
    pub fn merge(&mut self, o: &SearchStats) {
        self.iterations += o.iterations;
        self.process_rounds += o.process_rounds;
        self.leaf_scans += o.leaf_scans;
        self.find_leaf_ns += o.find_leaf_ns;
        self.buffer_ns += o.buffer_ns;
        self.stage_ns += o.stage_ns;
        self.copy_ns += o.copy_ns;
        self.compute_ns += o.compute_ns;
        self.simulated_ns += o.simulated_ns;
        self.wall += o.wall;
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutput {
    pub neighbors: Vec<NeighborList>,
    /// Per query, the leaves scanned in order (only if requested).
    pub visits: Option<Vec<Vec<u32>>>,
    pub stats: SearchStats,
}

/// One lazy search over a query block, steppable for inspection.
pub struct LazySearch<'a> {
    tree: &'a BufferKdTree,
    queries: Arc<PointMatrix>,
    config: BufferConfig,
    device: &'a mut Device,
    plan: &'a ChunkPlan,
    states: Vec<QueryState>,
    lists: Vec<NeighborList>,
    queues: QueryQueues,
    buffers: QueryBuffers,
    spill: Vec<(u32, u32)>,
    done: usize,
    stats: SearchStats,
    start_vt: u64,
    started: Instant,
}

impl<'a> LazySearch<'a> {
    pub fn new(
        tree: &'a BufferKdTree,
        queries: Arc<PointMatrix>,
        params: SearchParams,
        config: BufferConfig,
        device: &'a mut Device,
        plan: &'a ChunkPlan,
    ) -> Result<Self> {
        if queries.d() != tree.d() {
            return Err(Error::DimensionMismatch {
                expected: tree.d(),
                actual: queries.d(),
            });
        }
        params.validate(tree.n())?;
        config.validate()?;
        if plan.n() != tree.n() {
            return Err(Error::InvalidArgument(format!(
                "chunk plan covers {} rows, tree has {}",
                plan.n(),
                tree.n()
            )));
        }
        let m = queries.n();
        let cap = device.query_capacity(tree.d(), params.k);
        if m > cap {
            return Err(Error::Config(format!(
                "{m} queries exceed the device query block ({cap} queries); split the query set"
            )));
        }
        let start_vt = device.host_time_ns();
        Ok(Self {
            tree,
            queries,
            config,
            device,
            plan,
            states: vec![QueryState::default(); m],
            lists: vec![NeighborList::new(params.k); m],
            queues: QueryQueues::new(m),
            buffers: QueryBuffers::new(
                tree.top().num_leaves(),
                config.buffer_capacity,
                config.half_full_threshold,
            ),
            spill: Vec::new(),
            done: 0,
            stats: SearchStats::default(),
            start_vt,
            started: Instant::now(),
        })
    }

    pub fn census(&self) -> Census {
        Census {
            queries: self.queries.n(),
            input: self.queues.input.len(),
            reinsert: self.queues.reinsert.len(),
            buffered: self.buffers.total(),
            spilled: self.spill.len(),
            done: self.done,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.queues.is_empty() && self.buffers.is_empty() && self.spill.is_empty()
    }

    pub fn buffers(&self) -> &QueryBuffers {
        &self.buffers
    }

    pub fn states(&self) -> &[QueryState] {
        &self.states
    }

    /// One iteration: fetch, advance, buffer, and process the buffers when one
    /// of them is half full or nothing is left to fetch. Returns whether the
    /// buffers were processed.
    pub fn step(&mut self) -> Result<bool> {
        if self.is_finished() {
            return Ok(false);
        }
        self.stats.iterations += 1;

        let (batch, ns) = cpu_timed(|| {
            let pending = std::mem::take(&mut self.spill);
            for (leaf, q) in pending {
                if !self.buffers.try_insert(leaf, q) {
                    self.spill.push((leaf, q));
                }
            }
            self.queues.fetch(self.config.fetch_size)
        });
        self.charge_buffer(ns);

        let (steps, busy) = find_leaf_batch_timed(
            self.tree,
            &mut self.states,
            &self.lists,
            &self.queries,
            &batch,
            self.config.record_visits,
        );
        self.device.advance_host(busy);
        self.stats.find_leaf_ns += busy;

        let (trigger, ns) = cpu_timed(|| {
            for (&q, step) in batch.iter().zip(steps) {
                match step {
                    LeafStep::Leaf(leaf) => {
                        if !self.buffers.try_insert(leaf, q) {
                            self.spill.push((leaf, q));
                        }
                    }
                    LeafStep::Done => self.done += 1,
                }
            }
            self.buffers.any_half_full() || (self.queues.is_empty() && !self.buffers.is_empty())
        });
        self.charge_buffer(ns);
        if !trigger {
            return Ok(false);
        }

        let before = self.device.host_time_ns();
        let out = process_all_buffers(
            self.tree,
            &mut self.buffers,
            &mut self.states,
            &mut self.lists,
            &self.queries,
            self.device,
            self.plan,
        )?;
        let spent = self.device.host_time_ns() - before;
        self.stats.buffer_ns += spent.saturating_sub(out.pipeline.elapsed_ns);
        self.stats.process_rounds += 1;
        self.stats.leaf_scans += out.leaf_scans;
        self.stats.stage_ns += out.pipeline.stage_ns;
        self.stats.copy_ns += out.pipeline.copy_ns;
        self.stats.compute_ns += out.pipeline.compute_ns;
        self.done += out.finished.len();
        self.queues.reinsert.extend(out.reinsert);
        Ok(true)
    }

    fn charge_buffer(&mut self, ns: u64) {
        self.device.advance_host(ns);
        self.stats.buffer_ns += ns;
    }

    pub fn run(mut self) -> Result<SearchOutput> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(self.finish())
    }

    fn finish(mut self) -> SearchOutput {
        debug_assert_eq!(self.census().done, self.queries.n());
        self.stats.simulated_ns = self.device.host_time_ns() - self.start_vt;
        self.stats.wall = self.started.elapsed();
        let visits = self
            .config
            .record_visits
            .then(|| self.states.into_iter().map(|s| s.visits).collect());
        SearchOutput {
            neighbors: self.lists,
            visits,
            stats: self.stats,
        }
    }
}

/// Exact k-NN of every query via the lazy buffered search on one device.
pub fn lazy_search(
    tree: &BufferKdTree,
    queries: &PointMatrix,
    params: SearchParams,
    config: BufferConfig,
    device: &mut Device,
    plan: &ChunkPlan,
) -> Result<SearchOutput> {
    LazySearch::new(
        tree,
        Arc::new(queries.clone()),
        params,
        config,
        device,
        plan,
    )?
    .run()
}
