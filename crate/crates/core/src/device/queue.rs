//! In-order command queue executors.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use super::clock::{cpu_timed, par_for_each_timed};
use super::event::{CommandKind, Event};
use super::trace::TraceRecord;
use super::{KernelTask, Shared};
use crate::points::{sq_euclidean, PointMatrix};

pub(crate) type KernelOutput = Arc<Mutex<Option<Vec<KernelTask>>>>;

pub(crate) enum Op {
    Copy {
        staging: usize,
        buffer: usize,
    },
    Kernel {
        buffer: usize,
        queries: Arc<PointMatrix>,
        tasks: Vec<KernelTask>,
        out: KernelOutput,
    },
    Marker,
}

pub(crate) struct Command {
    pub op: Op,
    pub chunk: u32,
    pub round: u64,
    pub submit_vt: u64,
    pub deps: Vec<Event>,
    pub event: Event,
}

/// A queue is a thread draining a channel; commands run strictly in order.
pub(crate) struct QueueWorker {
    tx: Option<Sender<Command>>,
    handle: Option<JoinHandle<()>>,
}

impl QueueWorker {
    pub fn spawn(id: usize, shared: Arc<Shared>) -> Self {
        let (tx, rx) = channel();
        let handle = std::thread::Builder::new()
            .name(format!("dev{}-q{}", shared.device_id, id))
            .spawn(move || run_queue(id, shared, rx))
            .expect("spawn command queue thread");
        Self {
            tx: Some(tx),
            handle: Some(handle),
        }
    }

    pub fn submit(&self, cmd: Command) {
        let ev = cmd.event.clone();
        if let Err(e) = self.tx.as_ref().unwrap().send(cmd) {
            ev.fail(format!("queue closed: {e}"));
        }
    }
}

impl Drop for QueueWorker {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn run_queue(id: usize, shared: Arc<Shared>, rx: Receiver<Command>) {
    let mut queue_vt = 0u64;
    for cmd in rx {
        let mut ready = cmd.submit_vt.max(queue_vt);
        let mut dep_err = None;
        for d in &cmd.deps {
            match d.block() {
                Ok((_, end)) => ready = ready.max(end),
                Err(m) => dep_err = Some(m),
            }
        }
        if let Some(m) = dep_err {
            cmd.event.fail(format!("dependency failed: {m}"));
            continue;
        }
        if shared.is_faulted() {
            cmd.event.fail("device fault".into());
            continue;
        }
        let kind = match cmd.op {
            Op::Copy { .. } => CommandKind::Copy,
            Op::Kernel { .. } => CommandKind::Compute,
            Op::Marker => CommandKind::Marker,
        };
        let dur = match cmd.op {
            Op::Copy { staging, buffer } => exec_copy(&shared, staging, buffer),
            Op::Kernel {
                buffer,
                queries,
                tasks,
                out,
            } => match exec_kernel(&shared, buffer, &queries, tasks) {
                Ok((tasks, dur)) => {
                    *out.lock().unwrap() = Some(tasks);
                    Ok(dur)
                }
                Err(m) => Err(m),
            },
            Op::Marker => Ok(0),
        };
        match dur {
            Ok(dur) => {
                let end = ready + dur;
                queue_vt = end;
                if kind != CommandKind::Marker {
                    shared.trace.lock().unwrap().push(TraceRecord {
                        kind,
                        queue: id,
                        chunk: cmd.chunk,
                        start_ns: ready,
                        end_ns: end,
                        round: cmd.round,
                    });
                }
                cmd.event.complete(ready, end);
            }
            Err(m) => cmd.event.fail(m),
        }
    }
}

fn exec_copy(shared: &Shared, staging: usize, buffer: usize) -> Result<u64, String> {
    let src = shared.lock_staging(staging, "device copy");
    let mut dst = shared.lock_device(buffer, "device copy");
    let (bytes, cpu) = cpu_timed(|| {
        dst.points.clear();
        dst.points.extend_from_slice(&src.points);
        dst.ids.clear();
        dst.ids.extend_from_slice(&src.ids);
        dst.tag = src.tag;
        src.bytes()
    });
    let modeled = shared
        .copy_rate
        .map(|rate| (bytes as f64 / rate * 1e9) as u64)
        .unwrap_or(0);
    Ok(cpu.max(modeled))
}

fn exec_kernel(
    shared: &Shared,
    buffer: usize,
    queries: &PointMatrix,
    mut tasks: Vec<KernelTask>,
) -> Result<(Vec<KernelTask>, u64), String> {
    let data = shared.lock_device(buffer, "kernel");
    let tag = data
        .tag
        .ok_or_else(|| "kernel launched on an empty chunk buffer".to_string())?;
    if let Some(t) = tasks.iter().find(|t| t.lo < tag.lo || t.hi > tag.hi) {
        return Err(format!(
            "assignment [{}, {}) outside resident chunk [{}, {})",
            t.lo, t.hi, tag.lo, tag.hi
        ));
    }
    let d = queries.d();
    let chunk = &*data;
    let evals: u64 = tasks.iter().map(|t| (t.hi - t.lo) as u64).sum();
    let busy = shared.lanes.install(|| {
        par_for_each_timed(&mut tasks, |t| {
            let q = queries.row(t.query as usize);
            for pos in t.lo..t.hi {
                let off = pos - tag.lo;
                let p = &chunk.points[off * d..(off + 1) * d];
                t.list.insert(chunk.ids[off], sq_euclidean(q, p));
            }
        })
    });
    shared.add_distance_evals(evals);
    Ok((tasks, busy + shared.kernel_launch_ns))
}
