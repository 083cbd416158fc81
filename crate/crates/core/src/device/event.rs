use std::sync::{Arc, Condvar, Mutex};

/// What kind of command an event belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CommandKind {
    Stage,
    Copy,
    Compute,
    Marker,
}

impl CommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::Stage => "stage",
            CommandKind::Copy => "copy",
            CommandKind::Compute => "compute",
            CommandKind::Marker => "marker",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "stage" => CommandKind::Stage,
            "copy" => CommandKind::Copy,
            "compute" => CommandKind::Compute,
            "marker" => CommandKind::Marker,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
enum State {
    Pending,
    Done { start: u64, end: u64 },
    Failed(String),
}

#[derive(Debug)]
struct Inner {
    queue: usize,
    seq: u64,
    kind: CommandKind,
    /// `(queue, seq)` of commands that have finished once this one has.
    implies: Vec<(usize, u64)>,
    state: Mutex<State>,
    cv: Condvar,
}

/// One-shot completion handle for a submitted command. Can be waited on any
/// number of times.
#[derive(Debug, Clone)]
pub struct Event(Arc<Inner>);

impl Event {
    pub(crate) fn new(queue: usize, seq: u64, kind: CommandKind, deps: &[Event]) -> Self {
        let implies = deps
            .iter()
            .flat_map(|e| std::iter::once((e.queue(), e.seq())).chain(e.0.implies.iter().copied()))
            .collect();
        Event(Arc::new(Inner {
            queue,
            seq,
            kind,
            implies,
            state: Mutex::new(State::Pending),
            cv: Condvar::new(),
        }))
    }

    pub fn queue(&self) -> usize {
        self.0.queue
    }

    pub fn seq(&self) -> u64 {
        self.0.seq
    }

    pub fn kind(&self) -> CommandKind {
        self.0.kind
    }

    pub(crate) fn implies(&self) -> &[(usize, u64)] {
        &self.0.implies
    }

    pub fn is_complete(&self) -> bool {
        !matches!(*self.0.state.lock().unwrap(), State::Pending)
    }

    /// Simulated `(start, end)` once the command completed successfully.
    pub fn times(&self) -> Option<(u64, u64)> {
        match *self.0.state.lock().unwrap() {
            State::Done { start, end } => Some((start, end)),
            _ => None,
        }
    }

    pub(crate) fn complete(&self, start: u64, end: u64) {
        *self.0.state.lock().unwrap() = State::Done { start, end };
        self.0.cv.notify_all();
    }

    pub(crate) fn fail(&self, msg: String) {
        *self.0.state.lock().unwrap() = State::Failed(msg);
        self.0.cv.notify_all();
    }

    /// Blocks until the command finished. Returns its simulated `(start, end)`.
    pub(crate) fn block(&self) -> Result<(u64, u64), String> {
        let mut st = self.0.state.lock().unwrap();
        loop {
            match &*st {
                State::Pending => st = self.0.cv.wait(st).unwrap(),
                State::Done { start, end } => return Ok((*start, *end)),
                State::Failed(m) => return Err(m.clone()),
            }
        }
    }
}
