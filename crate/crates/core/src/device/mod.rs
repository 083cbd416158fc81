//! A simulated constrained-memory compute device.
//!
//! The device owns two chunk buffers, two host staging buffers paired with them
//! and two in-order command queues. Copies and kernels really execute (on one
//! thread per queue plus a pool of `worker_lanes` kernel threads), and each
//! command is also placed on a simulated timeline:
//!
//! * a command starts at the latest of its submission time on the host clock,
//!   the end of the previous command on its queue, and the end of its explicit
//!   dependencies;
//! * kernels last as long as their busiest lane spent on CPU, plus a fixed launch
//!   latency; copies last `bytes / simulated_copy_rate` (or their CPU time when
//!   unthrottled);
//! * the host clock advances by the CPU time of host work and jumps to the end of
//!   whatever event the host waits on.
//!
//! Buffer reuse is checked twice: when a command is submitted, against the
//! commands the host has not yet observed to complete, and when it executes, by
//! detecting concurrent use of a buffer lock.

mod clock;
mod event;
mod pipeline;
mod queue;
mod source;
mod trace;

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, TryLockError};

pub use clock::{cpu_timed, par_for_each_timed, thread_cpu_ns};
pub use event::{CommandKind, Event};
pub use pipeline::{Assignment, PipelineStats};
pub(crate) use source::next_source_id;
pub use source::{ChunkSource, FileSource, MatrixSource};
pub use trace::{overlap_audit, read_trace, total_ns, write_trace, OverlapMiss, TraceRecord};

use crate::error::{Error, Result};
use crate::neighbors::NeighborList;
use crate::points::PointMatrix;
use queue::{Command, KernelOutput, Op, QueueWorker};

pub const QUEUE_A: usize = 0;
pub const QUEUE_B: usize = 1;

/// Static description of a simulated device.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSpec {
    /// Bytes available for both chunk buffers plus the query/result block.
    pub memory_capacity: u64,
    /// Kernel lanes executing in parallel.
    pub worker_lanes: usize,
    /// Host-to-device transfer rate in bytes per second. `None` leaves copies
    /// unthrottled.
    pub simulated_copy_rate: Option<f64>,
    /// Fixed latency added to each kernel on the simulated timeline.
    pub kernel_launch_ns: u64,
}

impl Default for DeviceSpec {
    fn default() -> Self {
        Self {
            memory_capacity: 1 << 30,
            worker_lanes: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            simulated_copy_rate: None,
            kernel_launch_ns: 5_000,
        }
    }
}

impl DeviceSpec {
    pub fn with_capacity(memory_capacity: u64) -> Self {
        Self {
            memory_capacity,
            ..Self::default()
        }
    }
}

/// Bytes one leaf-structure row occupies in a chunk buffer (coordinates + id).
pub fn point_bytes(d: usize) -> u64 {
    (d as u64 + 1) * 4
}

/// Bytes one query occupies in the query/result block (coordinates + k results).
pub fn query_bytes(d: usize, k: usize) -> u64 {
    d as u64 * 4 + k as u64 * 8
}

/// Identifies a contiguous row range of one source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkTag {
    pub source: u64,
    pub lo: usize,
    pub hi: usize,
}

#[derive(Debug, Default)]
pub(crate) struct ChunkData {
    tag: Option<ChunkTag>,
    points: Vec<f32>,
    ids: Vec<u32>,
}

impl ChunkData {
    fn bytes(&self) -> u64 {
        (self.points.len() + self.ids.len()) as u64 * 4
    }
}

/// One query's work item in a kernel: scan rows `[lo, hi)` into `list`.
#[derive(Debug, Clone)]
pub struct KernelTask {
    pub query: u32,
    pub lo: usize,
    pub hi: usize,
    pub list: NeighborList,
}

pub(crate) struct Shared {
    device_id: usize,
    device_buffers: [Mutex<ChunkData>; 2],
    staging: [Mutex<ChunkData>; 2],
    trace: Mutex<Vec<TraceRecord>>,
    violations: Mutex<Vec<String>>,
    faulted: AtomicBool,
    lanes: rayon::ThreadPool,
    copy_rate: Option<f64>,
    kernel_launch_ns: u64,
    distance_evals: AtomicU64,
}

impl Shared {
    fn lock_checked<'a>(
        &self,
        m: &'a Mutex<ChunkData>,
        what: &str,
        who: &str,
    ) -> MutexGuard<'a, ChunkData> {
        match m.try_lock() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => {
                self.violations
                    .lock()
                    .unwrap()
                    .push(format!("{who}: {what} already in use"));
                m.lock().unwrap()
            }
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        }
    }

    pub(crate) fn lock_staging(&self, i: usize, who: &str) -> MutexGuard<'_, ChunkData> {
        self.lock_checked(&self.staging[i], &format!("staging buffer {i}"), who)
    }

    pub(crate) fn lock_device(&self, i: usize, who: &str) -> MutexGuard<'_, ChunkData> {
        self.lock_checked(&self.device_buffers[i], &format!("chunk buffer {i}"), who)
    }

    pub(crate) fn is_faulted(&self) -> bool {
        self.faulted.load(Ordering::SeqCst)
    }

    pub(crate) fn add_distance_evals(&self, n: u64) {
        self.distance_evals.fetch_add(n, Ordering::Relaxed);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Use {
    queue: usize,
    seq: u64,
}

/// The host's bookkeeping of what it has submitted and observed.
#[derive(Debug, Default)]
struct HostView {
    clock: u64,
    next_seq: [u64; 2],
    observed: [u64; 2],
    staging_tag: [Option<ChunkTag>; 2],
    staging_readers: [Vec<Use>; 2],
    buffer_tag: [Option<ChunkTag>; 2],
    buffer_writer: [Option<(Use, Event)>; 2],
    buffer_readers: [Vec<Use>; 2],
    restaged: Option<usize>,
    round: u64,
}

impl HostView {
    fn outstanding(&self, u: &Use) -> bool {
        u.seq > self.observed[u.queue]
    }

    fn prune(&mut self) {
        let observed = self.observed;
        let live = |u: &Use| u.seq > observed[u.queue];
        for i in 0..2 {
            self.staging_readers[i].retain(live);
            self.buffer_readers[i].retain(live);
            if matches!(&self.buffer_writer[i], Some((u, _)) if !live(u)) {
                self.buffer_writer[i] = None;
            }
        }
    }
}

/// Handle to a submitted kernel; its updated tasks become available after the
/// event completes.
pub struct KernelHandle {
    pub event: Event,
    out: KernelOutput,
}

impl KernelHandle {
    pub fn take_tasks(&self) -> Option<Vec<KernelTask>> {
        self.out.lock().unwrap().take()
    }
}

pub struct Device {
    id: usize,
    spec: DeviceSpec,
    chunk_bytes: u64,
    query_block_bytes: u64,
    queues: Vec<QueueWorker>,
    shared: Arc<Shared>,
    host: HostView,
}

impl std::fmt::Debug for Device {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Device")
            .field("id", &self.id)
            .field("spec", &self.spec)
            .field("chunk_bytes", &self.chunk_bytes)
            .field("query_block_bytes", &self.query_block_bytes)
            .finish()
    }
}

impl Device {
    /// Reserves two chunk buffers of `chunk_bytes` and a query/result block of
    /// `query_block_bytes`, and starts both command queues.
    pub fn init(spec: DeviceSpec, chunk_bytes: u64, query_block_bytes: u64) -> Result<Self> {
        Self::init_with_id(0, spec, chunk_bytes, query_block_bytes)
    }

    pub fn init_with_id(
        id: usize,
        spec: DeviceSpec,
        chunk_bytes: u64,
        query_block_bytes: u64,
    ) -> Result<Self> {
        if spec.worker_lanes == 0 {
            return Err(Error::Config("worker_lanes must be >= 1".into()));
        }
        if let Some(r) = spec.simulated_copy_rate {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("invalid copy rate {r}")));
            }
        }
        let required = 2 * chunk_bytes + query_block_bytes;
        if required > spec.memory_capacity {
            return Err(Error::CapacityExceeded {
                required,
                available: spec.memory_capacity,
            });
        }
        let lanes = rayon::ThreadPoolBuilder::new()
            .num_threads(spec.worker_lanes)
            .thread_name(move |i| format!("dev{id}-lane{i}"))
            .build()
            .map_err(|e| Error::Config(format!("cannot start kernel lanes: {e}")))?;
        let shared = Arc::new(Shared {
            device_id: id,
            device_buffers: Default::default(),
            staging: Default::default(),
            trace: Mutex::new(Vec::new()),
            violations: Mutex::new(Vec::new()),
            faulted: AtomicBool::new(false),
            lanes,
            copy_rate: spec.simulated_copy_rate,
            kernel_launch_ns: spec.kernel_launch_ns,
            distance_evals: AtomicU64::new(0),
        });
        let queues = (0..2)
            .map(|q| QueueWorker::spawn(q, shared.clone()))
            .collect();
        Ok(Self {
            id,
            spec,
            chunk_bytes,
            query_block_bytes,
            queues,
            shared,
            host: HostView::default(),
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn spec(&self) -> &DeviceSpec {
        &self.spec
    }

    pub fn chunk_bytes(&self) -> u64 {
        self.chunk_bytes
    }

    pub fn query_block_bytes(&self) -> u64 {
        self.query_block_bytes
    }

    /// Rows of dimension `d` that fit one chunk buffer.
    pub fn chunk_capacity_rows(&self, d: usize) -> usize {
        (self.chunk_bytes / point_bytes(d)) as usize
    }

    /// Queries of dimension `d` (with `k` results each) the query block can hold.
    pub fn query_capacity(&self, d: usize, k: usize) -> usize {
        (self.query_block_bytes / query_bytes(d, k)) as usize
    }

    /// Current host time on the simulated timeline.
    pub fn host_time_ns(&self) -> u64 {
        self.host.clock
    }

    /// Accounts for host work done outside the device API.
    pub fn advance_host(&mut self, ns: u64) {
        self.host.clock += ns;
    }

    pub fn trace(&self) -> Vec<TraceRecord> {
        self.shared.trace.lock().unwrap().clone()
    }

    pub fn clear_trace(&self) {
        self.shared.trace.lock().unwrap().clear();
    }

    /// Buffer conflicts observed while commands executed.
    pub fn hazard_violations(&self) -> Vec<String> {
        self.shared.violations.lock().unwrap().clone()
    }

    pub fn distance_evals(&self) -> u64 {
        self.shared.distance_evals.load(Ordering::Relaxed)
    }

    /// Makes every command executed from now on fail.
    pub fn inject_fault(&self) {
        self.shared.faulted.store(true, Ordering::SeqCst);
    }

    pub fn is_faulted(&self) -> bool {
        self.shared.is_faulted()
    }

    fn device_error(&self, message: impl Into<String>) -> Error {
        Error::Device {
            device: self.id,
            message: message.into(),
        }
    }

    fn next_use(&mut self, queue: usize) -> Use {
        self.host.next_seq[queue] += 1;
        Use {
            queue,
            seq: self.host.next_seq[queue],
        }
    }

    fn check_queue(queue: usize) -> Result<()> {
        if queue > 1 {
            return Err(Error::Contract(format!("no command queue {queue}")));
        }
        Ok(())
    }

    /// Host-side copy of rows `[lo, hi)` of `source` into staging buffer `staging`.
    /// `queue` and `chunk` only label the trace record.
    pub fn stage(
        &mut self,
        staging: usize,
        source: &dyn ChunkSource,
        lo: usize,
        hi: usize,
        queue: usize,
        chunk: u32,
    ) -> Result<()> {
        Self::check_queue(staging)?;
        if lo > hi || hi > source.len() {
            return Err(Error::Contract(format!(
                "stage range [{lo}, {hi}) outside source of {} rows",
                source.len()
            )));
        }
        let bytes = (hi - lo) as u64 * point_bytes(source.dim());
        if bytes > self.chunk_bytes {
            let per_chunk = (self.chunk_bytes / point_bytes(source.dim())) as usize;
            return Err(Error::ChunkTooLarge {
                rows: hi - lo,
                bytes,
                capacity: self.chunk_bytes,
                min_chunks: if per_chunk == 0 {
                    usize::MAX
                } else {
                    source.len().div_ceil(per_chunk)
                },
            });
        }
        self.host.prune();
        if let Some(u) = self.host.staging_readers[staging]
            .iter()
            .find(|u| self.host.outstanding(u))
        {
            return Err(Error::Hazard(format!(
                "staging buffer {staging} overwritten while copy #{} on queue {} may still read it",
                u.seq, u.queue
            )));
        }
        let shared = self.shared.clone();
        let (res, dur) = cpu_timed(|| {
            let mut buf = shared.lock_staging(staging, "host stage");
            let ChunkData { points, ids, tag } = &mut *buf;
            *tag = None;
            source.read_chunk(lo, hi, points, ids)?;
            *tag = Some(ChunkTag {
                source: source.source_id(),
                lo,
                hi,
            });
            Ok::<_, Error>(())
        });
        res?;
        let start = self.host.clock;
        self.host.clock += dur;
        self.host.staging_tag[staging] = Some(ChunkTag {
            source: source.source_id(),
            lo,
            hi,
        });
        self.shared.trace.lock().unwrap().push(TraceRecord {
            kind: CommandKind::Stage,
            queue,
            chunk,
            start_ns: start,
            end_ns: self.host.clock,
            round: self.host.round,
        });
        Ok(())
    }

    /// Non-blocking transfer of staging buffer `staging` into chunk buffer `buffer`.
    pub fn enqueue_copy(
        &mut self,
        queue: usize,
        staging: usize,
        buffer: usize,
        chunk: u32,
    ) -> Result<Event> {
        Self::check_queue(queue)?;
        Self::check_queue(staging)?;
        Self::check_queue(buffer)?;
        self.host.prune();
        let tag = self.host.staging_tag[staging].ok_or_else(|| {
            Error::Contract(format!("copy from staging buffer {staging} before staging"))
        })?;
        if let Some(u) = self.host.buffer_readers[buffer]
            .iter()
            .find(|u| u.queue != queue && self.host.outstanding(u))
        {
            return Err(Error::Hazard(format!(
                "copy into chunk buffer {buffer} while kernel #{} on queue {} may still read it",
                u.seq, u.queue
            )));
        }
        if let Some((u, _)) = &self.host.buffer_writer[buffer] {
            if u.queue != queue && self.host.outstanding(u) {
                return Err(Error::Hazard(format!(
                    "copy into chunk buffer {buffer} while copy #{} on queue {} still writes it",
                    u.seq, u.queue
                )));
            }
        }
        let u = self.next_use(queue);
        let event = Event::new(queue, u.seq, CommandKind::Copy, &[]);
        self.host.staging_readers[staging].push(u);
        self.host.buffer_writer[buffer] = Some((u, event.clone()));
        self.host.buffer_tag[buffer] = Some(tag);
        self.queues[queue].submit(Command {
            op: Op::Copy { staging, buffer },
            chunk,
            round: self.host.round,
            submit_vt: self.host.clock,
            deps: Vec::new(),
            event: event.clone(),
        });
        Ok(event)
    }

    /// Non-blocking brute-force kernel over the rows resident in `buffer`.
    /// Every task's range must lie within the resident chunk. A copy into
    /// `buffer` pending on the other queue must be listed in `deps`.
    pub fn enqueue_brute_kernel(
        &mut self,
        queue: usize,
        buffer: usize,
        chunk: u32,
        queries: Arc<PointMatrix>,
        tasks: Vec<KernelTask>,
        deps: &[Event],
    ) -> Result<KernelHandle> {
        Self::check_queue(queue)?;
        Self::check_queue(buffer)?;
        self.host.prune();
        let tag = self.host.buffer_tag[buffer].ok_or_else(|| {
            Error::Contract(format!("kernel on chunk buffer {buffer} with no data"))
        })?;
        if let Some(t) = tasks
            .iter()
            .find(|t| t.lo > t.hi || t.lo < tag.lo || t.hi > tag.hi)
        {
            return Err(Error::Contract(format!(
                "assignment [{}, {}) outside resident chunk [{}, {})",
                t.lo, t.hi, tag.lo, tag.hi
            )));
        }
        if let Some(t) = tasks.iter().find(|t| t.query as usize >= queries.n()) {
            return Err(Error::Contract(format!(
                "query {} not in query block",
                t.query
            )));
        }
        if let Some((u, _)) = &self.host.buffer_writer[buffer] {
            let covered = deps
                .iter()
                .any(|e| e.queue() == u.queue && e.seq() >= u.seq);
            if u.queue != queue && self.host.outstanding(u) && !covered {
                return Err(Error::Hazard(format!(
                    "kernel reads chunk buffer {buffer} before copy #{} on queue {} is known complete",
                    u.seq, u.queue
                )));
            }
        }
        let u = self.next_use(queue);
        let event = Event::new(queue, u.seq, CommandKind::Compute, deps);
        self.host.buffer_readers[buffer].push(u);
        let out: KernelOutput = Arc::new(Mutex::new(None));
        self.queues[queue].submit(Command {
            op: Op::Kernel {
                buffer,
                queries,
                tasks,
                out: out.clone(),
            },
            chunk,
            round: self.host.round,
            submit_vt: self.host.clock,
            deps: deps.to_vec(),
            event: event.clone(),
        });
        Ok(KernelHandle { event, out })
    }

    /// Blocks until `event` completed. Its effects and those of its predecessors
    /// on the same queue are visible afterwards.
    pub fn wait(&mut self, event: &Event) -> Result<()> {
        match event.block() {
            Ok((_, end)) => {
                self.host.clock = self.host.clock.max(end);
                for (q, seq) in std::iter::once((event.queue(), event.seq()))
                    .chain(event.implies().iter().copied())
                {
                    self.host.observed[q] = self.host.observed[q].max(seq);
                }
                Ok(())
            }
            Err(m) => Err(self.device_error(m)),
        }
    }

    /// Blocks until everything submitted to `queue` so far completed.
    pub fn wait_queue(&mut self, queue: usize) -> Result<()> {
        Self::check_queue(queue)?;
        let u = self.next_use(queue);
        let event = Event::new(queue, u.seq, CommandKind::Marker, &[]);
        self.queues[queue].submit(Command {
            op: Op::Marker,
            chunk: 0,
            round: self.host.round,
            submit_vt: self.host.clock,
            deps: Vec::new(),
            event: event.clone(),
        });
        self.wait(&event)
    }

    /// Waits for both queues.
    pub fn finish(&mut self) -> Result<()> {
        self.wait_queue(QUEUE_A)?;
        self.wait_queue(QUEUE_B)
    }

    /// Copy of a chunk buffer's contents (rows, ids). Only meaningful once the
    /// host has waited for the copy that filled it.
    pub fn read_chunk_buffer(&self, buffer: usize) -> (Vec<f32>, Vec<u32>) {
        let b = self.shared.device_buffers[buffer].lock().unwrap();
        (b.points.clone(), b.ids.clone())
    }

    pub fn read_staging_buffer(&self, staging: usize) -> (Vec<f32>, Vec<u32>) {
        let b = self.shared.staging[staging].lock().unwrap();
        (b.points.clone(), b.ids.clone())
    }

    fn writer_event(&self, buffer: usize) -> Option<Event> {
        self.host.buffer_writer[buffer]
            .as_ref()
            .filter(|(u, _)| self.host.outstanding(u))
            .map(|(_, e)| e.clone())
    }
}
