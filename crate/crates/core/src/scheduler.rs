//! Chunk planning over the leaf structure, query chunking, and running one
//! search per device over disjoint query ranges.

use std::ops::Range;
use std::sync::Arc;

use crate::buffer_tree::{BufferConfig, BufferKdTree, LazySearch, SearchStats};
use crate::device::{point_bytes, query_bytes, Device, DeviceSpec};
use crate::error::{Error, Result};
use crate::neighbors::{NeighborList, SearchParams};
use crate::points::PointMatrix;

/// Partition of `[0, n)` into `N` contiguous chunks with
/// `C_L(j) = ceil((j-1) n / N)` and `C_R(j) = ceil(j n / N)` (1-based `j`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlan {
    n: usize,
    chunks: usize,
}

/// The part of a leaf range that falls into one chunk (0-based `chunk`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkPart {
    pub chunk: usize,
    pub lo: usize,
    pub hi: usize,
}

impl ChunkPlan {
    pub fn new(n: usize, chunks: usize) -> Result<Self> {
        if chunks == 0 || chunks > n {
            return Err(Error::InvalidArgument(format!(
                "chunk count {chunks} must be in [1, {n}]"
            )));
        }
        Ok(Self { n, chunks })
    }

    /// Rows covered by the plan.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of chunks `N`.
    pub fn len(&self) -> usize {
        self.chunks
    }

    pub fn is_empty(&self) -> bool {
        self.chunks == 0
    }

    fn edge(&self, j: usize) -> usize {
        ((j as u128 * self.n as u128).div_ceil(self.chunks as u128)) as usize
    }

    /// Half-open bounds of chunk `j` (0-based).
    pub fn bounds(&self, j: usize) -> (usize, usize) {
        assert!(j < self.chunks, "chunk {j} out of {}", self.chunks);
        (self.edge(j), self.edge(j + 1))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.chunks).map(|j| self.bounds(j))
    }

    pub fn max_chunk_len(&self) -> usize {
        self.n.div_ceil(self.chunks)
    }

    /// Chunks overlapping `[l, r)`, each with its clipped sub-range.
    pub fn assign(&self, l: usize, r: usize) -> Vec<ChunkPart> {
        assert!(l < r && r <= self.n, "invalid leaf range [{l}, {r})");
        // first chunk whose right edge exceeds l
        let first = partition_point(self.chunks, |j| self.edge(j + 1) <= l);
        let mut out = Vec::new();
        for j in first..self.chunks {
            let (cl, cr) = self.bounds(j);
            if cl >= r {
                break;
            }
            out.push(ChunkPart {
                chunk: j,
                lo: l.max(cl),
                hi: r.min(cr),
            });
        }
        out
    }
}

fn partition_point(len: usize, pred: impl Fn(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0, len);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// A plan with exactly `chunks` chunks, checked against a chunk buffer of
/// `capacity` bytes.
pub fn plan_chunks(n: usize, chunks: usize, capacity: u64, point_bytes: u64) -> Result<ChunkPlan> {
    let plan = ChunkPlan::new(n, chunks)?;
    let rows = plan.max_chunk_len();
    let bytes = rows as u64 * point_bytes;
    if bytes > capacity {
        return Err(Error::ChunkTooLarge {
            rows,
            bytes,
            capacity,
            min_chunks: min_chunks(n, capacity, point_bytes),
        });
    }
    Ok(plan)
}

fn min_chunks(n: usize, capacity: u64, point_bytes: u64) -> usize {
    match (capacity / point_bytes) as usize {
        0 => usize::MAX,
        rows => n.div_ceil(rows),
    }
}

/// The smallest plan whose chunks fit a buffer of `capacity` bytes.
pub fn auto_plan(n: usize, capacity: u64, point_bytes: u64) -> Result<ChunkPlan> {
    let chunks = min_chunks(n, capacity, point_bytes);
    if chunks > n {
        return Err(Error::Config(format!(
            "a {capacity}-byte chunk buffer cannot hold a single {point_bytes}-byte point"
        )));
    }
    plan_chunks(n, chunks, capacity, point_bytes)
}

/// Plan for `device` over `n` rows of dimension `d`: `chunks` if given,
/// otherwise the smallest count that fits.
pub fn plan_for_device(
    device: &Device,
    n: usize,
    d: usize,
    chunks: Option<usize>,
) -> Result<ChunkPlan> {
    match chunks {
        Some(c) => plan_chunks(n, c, device.chunk_bytes(), point_bytes(d)),
        None => auto_plan(n, device.chunk_bytes(), point_bytes(d)),
    }
}

/// Splits `[0, m)` into the fewest ranges of at most `capacity` indices,
/// sizes differing by at most one (larger ranges first).
pub fn chunk_queries(m: usize, capacity: usize) -> Vec<Range<usize>> {
    assert!(capacity >= 1, "query capacity must be >= 1");
    if m == 0 {
        return Vec::new();
    }
    even_split(m, m.div_ceil(capacity))
}

/// `[0, m)` cut into `parts` contiguous ranges, the first `m % parts` one longer.
pub fn even_split(m: usize, parts: usize) -> Vec<Range<usize>> {
    let (base, extra) = (m / parts, m % parts);
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Devices that all read the same tree.
#[derive(Debug)]
pub struct DeviceFleet {
    devices: Vec<Device>,
    chunks: Option<usize>,
    query_chunk_size: Option<usize>,
}

impl DeviceFleet {
    pub fn new(devices: Vec<Device>) -> Result<Self> {
        if devices.is_empty() {
            return Err(Error::InvalidArgument(
                "a fleet needs at least one device".into(),
            ));
        }
        Ok(Self {
            devices,
            chunks: None,
            query_chunk_size: None,
        })
    }

    /// Fixes the chunk count instead of choosing the smallest that fits.
    pub fn with_num_chunks(mut self, chunks: Option<usize>) -> Self {
        self.chunks = chunks;
        self
    }

    /// Caps the queries per search below the device's query capacity.
    pub fn with_query_chunk_size(mut self, size: Option<usize>) -> Self {
        self.query_chunk_size = size;
        self
    }

    /// `count` devices like `base`, each sized for two chunks of `chunk_rows`
    /// points of dimension `d` and `query_capacity` queries with `k` results.
    pub fn sized(
        count: usize,
        base: &DeviceSpec,
        d: usize,
        k: usize,
        chunk_rows: usize,
        query_capacity: usize,
    ) -> Result<Self> {
        let chunk_bytes = chunk_rows as u64 * point_bytes(d);
        let query_block = query_capacity as u64 * query_bytes(d, k);
        let spec = DeviceSpec {
            memory_capacity: 2 * chunk_bytes + query_block,
            ..base.clone()
        };
        let devices = (0..count)
            .map(|i| Device::init_with_id(i, spec.clone(), chunk_bytes, query_block))
            .collect::<Result<Vec<_>>>()?;
        Self::new(devices)
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn devices_mut(&mut self) -> &mut [Device] {
        &mut self.devices
    }
}

#[derive(Debug, Clone)]
pub struct FleetOutput {
    pub neighbors: Vec<NeighborList>,
    /// Counters summed over all searches; `simulated_ns` is the busiest device's.
    pub stats: SearchStats,
    /// Simulated time each device spent.
    pub device_ns: Vec<u64>,
    /// Chunk count used by each device.
    pub device_chunks: Vec<usize>,
    /// Devices that failed and had their work moved.
    pub failed: Vec<usize>,
}

struct DeviceRun {
    done: Vec<(Range<usize>, Vec<NeighborList>)>,
    pending: Vec<Range<usize>>,
    stats: SearchStats,
    elapsed: u64,
    chunks: usize,
    error: Option<Error>,
}

#[allow(clippy::too_many_arguments)]
fn run_device(
    device: &mut Device,
    tree: &BufferKdTree,
    queries: &PointMatrix,
    params: SearchParams,
    config: BufferConfig,
    chunks: Option<usize>,
    query_chunk: Option<usize>,
    ranges: Vec<Range<usize>>,
) -> DeviceRun {
    let start = device.host_time_ns();
    let mut run = DeviceRun {
        done: Vec::new(),
        pending: Vec::new(),
        stats: SearchStats::default(),
        elapsed: 0,
        chunks: 0,
        error: None,
    };
    let plan = match plan_for_device(device, tree.n(), tree.d(), chunks) {
        Ok(p) => p,
        Err(e) => {
            run.pending = ranges;
            run.error = Some(e);
            return run;
        }
    };
    run.chunks = plan.len();
    let mut cap = device.query_capacity(tree.d(), params.k);
    if let Some(c) = query_chunk {
        cap = cap.min(c);
    }
    if cap == 0 {
        run.pending = ranges;
        run.error = Some(Error::Config(
            "device query block cannot hold a single query".into(),
        ));
        return run;
    }
    let mut todo: Vec<Range<usize>> = ranges
        .into_iter()
        .flat_map(|r| {
            chunk_queries(r.len(), cap)
                .into_iter()
                .map(move |s| r.start + s.start..r.start + s.end)
        })
        .collect();
    todo.reverse();
    while let Some(r) = todo.pop() {
        let result = queries
            .slice_rows(r.clone())
            .and_then(|block| LazySearch::new(tree, Arc::new(block), params, config, device, &plan))
            .and_then(|s| s.run());
        match result {
            Ok(out) => {
                run.stats.merge(&out.stats);
                run.done.push((r, out.neighbors));
            }
            Err(e) => {
                todo.push(r);
                todo.reverse();
                run.pending = todo;
                run.error = Some(e);
                break;
            }
        }
    }
    run.elapsed = device.host_time_ns() - start;
    run
}

/// Splits the queries evenly across the fleet, runs one lazy search per
/// device-sized query block on each device concurrently, and merges the
/// results in query order. Ranges of a device that fails are moved to the
/// surviving devices.
pub fn run_multi_device(
    fleet: &mut DeviceFleet,
    tree: &BufferKdTree,
    queries: &PointMatrix,
    params: SearchParams,
    config: BufferConfig,
) -> Result<FleetOutput> {
    if queries.d() != tree.d() {
        return Err(Error::DimensionMismatch {
            expected: tree.d(),
            actual: queries.d(),
        });
    }
    params.validate(tree.n())?;
    config.validate()?;
    let m = queries.n();
    let n_dev = fleet.devices.len();
    let mut results: Vec<Option<NeighborList>> = vec![None; m];
    let mut out = FleetOutput {
        neighbors: Vec::new(),
        stats: SearchStats::default(),
        device_ns: vec![0; n_dev],
        device_chunks: vec![0; n_dev],
        failed: Vec::new(),
    };
    let mut alive: Vec<usize> = (0..n_dev).collect();
    let mut pending: Vec<Vec<Range<usize>>> = even_split(m, n_dev.min(m.max(1)))
        .into_iter()
        .filter(|r| !r.is_empty())
        .map(|r| vec![r])
        .collect();
    pending.resize(n_dev, Vec::new());
    let (chunks, query_chunk) = (fleet.chunks, fleet.query_chunk_size);

    loop {
        let work: Vec<(usize, Vec<Range<usize>>)> = alive
            .iter()
            .map(|&i| (i, std::mem::take(&mut pending[i])))
            .filter(|(_, r)| !r.is_empty())
            .collect();
        if work.is_empty() {
            break;
        }
        let runs: Vec<(usize, DeviceRun)> = std::thread::scope(|s| {
            let mut devices: Vec<Option<&mut Device>> =
                fleet.devices.iter_mut().map(Some).collect();
            let handles: Vec<_> = work
                .into_iter()
                .map(|(i, ranges)| {
                    let dev = devices[i].take().expect("device used twice");
                    let h = s.spawn(move || {
                        run_device(
                            dev,
                            tree,
                            queries,
                            params,
                            config,
                            chunks,
                            query_chunk,
                            ranges,
                        )
                    });
                    (i, h)
                })
                .collect();
            handles
                .into_iter()
                .map(|(i, h)| (i, h.join().expect("device driver panicked")))
                .collect()
        });

        let mut orphaned = Vec::new();
        for (i, run) in runs {
            out.stats.merge(&run.stats);
            out.device_ns[i] += run.elapsed;
            out.device_chunks[i] = run.chunks;
            for (r, lists) in run.done {
                for (slot, l) in results[r].iter_mut().zip(lists) {
                    *slot = Some(l);
                }
            }
            match run.error {
                None => {}
                Some(Error::Device { device, message }) => {
                    log::warn!(
                        "device {device} failed ({message}); moving {} query ranges to other devices",
                        run.pending.len()
                    );
                    alive.retain(|&a| a != i);
                    out.failed.push(i);
                    orphaned.extend(run.pending);
                }
                Some(e) => return Err(e),
            }
        }
        if orphaned.is_empty() {
            continue;
        }
        if alive.is_empty() {
            return Err(Error::Device {
                device: *out.failed.last().unwrap(),
                message: "all devices failed".into(),
            });
        }
        for (k, r) in orphaned.into_iter().enumerate() {
            let parts = even_split(r.len(), alive.len().min(r.len()));
            for (p, sub) in parts.into_iter().enumerate() {
                let target = alive[(k + p) % alive.len()];
                pending[target].push(r.start + sub.start..r.start + sub.end);
            }
        }
    }

    out.stats.simulated_ns = out.device_ns.iter().copied().max().unwrap_or(0);
    out.neighbors = results
        .into_iter()
        .map(|l| l.expect("query left unprocessed"))
        .collect();
    Ok(out)
}
