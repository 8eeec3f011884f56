//! Deterministic thread and channel identifiers.
//!
//! Every managed thread carries a [`DetThreadId`]: the path of child indices
//! from the main thread down to it. The main thread is `[]`, its first child
//! `[1]`, that child's second child `[1,2]`, and so on. The index is taken
//! from a counter owned by the spawning thread, so two threads racing to
//! spawn never interfere with each other's numbering.
//!
//! Threads that were not started through [`spawn`] have no position in the
//! tree and report [`DetThreadId::Unmanaged`].

use std::cell::{Cell, RefCell};
use std::fmt;
use std::io;
use std::rc::Rc;
use std::str::FromStr;
use std::sync::Arc;
use std::thread;

use crate::record::Segment;
use crate::runtime::Runtime;

/// Position of a thread in the spawn tree.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DetThreadId {
    /// Child indices from the main thread, root to leaf. Elements are >= 1.
    Path(Arc<[u32]>),
    /// A thread created outside of [`spawn`].
    Unmanaged,
}

impl DetThreadId {
    /// The main thread, `[]`.
    pub fn main() -> Self {
        DetThreadId::Path(Arc::from(Vec::new()))
    }

    pub fn from_path(path: &[u32]) -> Self {
        DetThreadId::Path(Arc::from(path))
    }

    pub fn path(&self) -> Option<&[u32]> {
        match self {
            DetThreadId::Path(p) => Some(p),
            DetThreadId::Unmanaged => None,
        }
    }

    pub fn is_unmanaged(&self) -> bool {
        matches!(self, DetThreadId::Unmanaged)
    }

    /// Depth in the spawn tree; `None` for unmanaged threads.
    pub fn depth(&self) -> Option<usize> {
        self.path().map(<[u32]>::len)
    }

    /// The id a child spawned with `index` would receive.
    pub fn child(&self, index: u32) -> Self {
        match self {
            DetThreadId::Path(p) => {
                let mut path = Vec::with_capacity(p.len() + 1);
                path.extend_from_slice(p);
                path.push(index);
                DetThreadId::Path(path.into())
            }
            DetThreadId::Unmanaged => DetThreadId::Unmanaged,
        }
    }

    /// The spawning thread's id. `None` for the main thread and for
    /// unmanaged threads.
    pub fn parent(&self) -> Option<Self> {
        match self.path() {
            Some(p) if !p.is_empty() => Some(DetThreadId::from_path(&p[..p.len() - 1])),
            _ => None,
        }
    }
}

impl fmt::Display for DetThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DetThreadId::Unmanaged => f.write_str("NONE"),
            DetThreadId::Path(p) => {
                f.write_str("[")?;
                for (i, idx) in p.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{idx}")?;
                }
                f.write_str("]")
            }
        }
    }
}

impl fmt::Debug for DetThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid thread id {0:?}")]
pub struct ParseIdError(pub String);

impl FromStr for DetThreadId {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "NONE" {
            return Ok(DetThreadId::Unmanaged);
        }
        let inner = s
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| ParseIdError(s.to_string()))?;
        if inner.trim().is_empty() {
            return Ok(DetThreadId::main());
        }
        let path = inner
            .split(',')
            .map(|p| p.trim().parse::<u32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| ParseIdError(s.to_string()))?;
        Ok(DetThreadId::Path(path.into()))
    }
}

/// Identifies one sender/receiver pair: the creating thread plus that
/// thread's channel counter (1 for its first channel).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DetChannelId {
    pub creator: DetThreadId,
    pub seq: u64,
}

impl DetChannelId {
    pub fn new(creator: DetThreadId, seq: u64) -> Self {
        DetChannelId { creator, seq }
    }
}

impl fmt::Display for DetChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.creator, self.seq)
    }
}

impl fmt::Debug for DetChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for DetChannelId {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseIdError(s.to_string());
        let inner = s
            .trim()
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(err)?;
        let (creator, seq) = inner.rsplit_once(',').ok_or_else(err)?;
        Ok(DetChannelId {
            creator: creator.parse()?,
            seq: seq.trim().parse().map_err(|_| err())?,
        })
    }
}

/// Per-thread bookkeeping for a managed thread.
pub(crate) struct ThreadCtx {
    pub(crate) dti: DetThreadId,
    children_spawned: Cell<u32>,
    channels_created: Cell<u64>,
    /// Logical time: number of channel events performed so far.
    pub(crate) clock: Cell<u64>,
    pub(crate) runtime: Arc<Runtime>,
    pub(crate) segment: Option<Segment>,
}

impl ThreadCtx {
    fn new(dti: DetThreadId, runtime: Arc<Runtime>) -> Self {
        let segment = runtime.new_segment();
        ThreadCtx {
            dti,
            children_spawned: Cell::new(0),
            channels_created: Cell::new(0),
            clock: Cell::new(0),
            runtime,
            segment,
        }
    }

    /// Post-increments the logical clock.
    pub(crate) fn tick(&self) -> u64 {
        let now = self.clock.get();
        self.clock.set(now + 1);
        now
    }
}

thread_local! {
    static CTX: RefCell<Option<Rc<ThreadCtx>>> = const { RefCell::new(None) };
    static UNMANAGED_CHANNELS: Cell<u64> = const { Cell::new(0) };
}

/// Restores the previous context of the current thread on drop and reports
/// the thread's exit to its runtime.
pub(crate) struct CtxGuard {
    previous: Option<Rc<ThreadCtx>>,
    runtime: Arc<Runtime>,
}

impl Drop for CtxGuard {
    fn drop(&mut self) {
        let previous = self.previous.take();
        CTX.with(|c| *c.borrow_mut() = previous);
        self.runtime.thread_exited();
    }
}

/// Installs a managed context on the current thread. The caller is
/// responsible for having called `runtime.thread_started()`.
pub(crate) fn enter(dti: DetThreadId, runtime: Arc<Runtime>) -> CtxGuard {
    let ctx = Rc::new(ThreadCtx::new(dti, runtime.clone()));
    let previous = CTX.with(|c| c.borrow_mut().replace(ctx));
    CtxGuard { previous, runtime }
}

pub(crate) fn current_ctx() -> Option<Rc<ThreadCtx>> {
    let ctx = CTX.with(|c| c.borrow().clone());
    if ctx.is_some() {
        return ctx;
    }
    // A process that never called `run_main` still gets `[]` for its main
    // thread. The context is installed once and never torn down.
    if thread::current().name() == Some("main") {
        let runtime = Runtime::global().clone();
        runtime.thread_started();
        let ctx = Rc::new(ThreadCtx::new(DetThreadId::main(), runtime));
        CTX.with(|c| *c.borrow_mut() = Some(ctx.clone()));
        return Some(ctx);
    }
    None
}

/// The calling thread's deterministic id.
pub fn current_dti() -> DetThreadId {
    current_ctx()
        .map(|c| c.dti.clone())
        .unwrap_or(DetThreadId::Unmanaged)
}

/// Assigns the next channel id for the calling thread.
pub fn next_channel_id() -> DetChannelId {
    match current_ctx() {
        Some(ctx) => {
            let seq = ctx.channels_created.get() + 1;
            ctx.channels_created.set(seq);
            DetChannelId::new(ctx.dti.clone(), seq)
        }
        None => {
            let seq = UNMANAGED_CHANNELS.with(|c| {
                let seq = c.get() + 1;
                c.set(seq);
                seq
            });
            DetChannelId::new(DetThreadId::Unmanaged, seq)
        }
    }
}

/// Handle to a thread started with [`spawn`].
#[derive(Debug)]
pub struct JoinHandle<T> {
    inner: thread::JoinHandle<T>,
    dti: DetThreadId,
    runtime: Option<Arc<Runtime>>,
}

impl<T> JoinHandle<T> {
    pub fn dti(&self) -> &DetThreadId {
        &self.dti
    }

    pub fn thread(&self) -> &thread::Thread {
        self.inner.thread()
    }

    pub fn is_finished(&self) -> bool {
        self.inner.is_finished()
    }

    /// Waits for the thread to finish. While waiting, the caller counts as
    /// quiescent for end-of-log release purposes.
    pub fn join(self) -> thread::Result<T> {
        match self.runtime {
            Some(rt) => {
                rt.join_started();
                let res = self.inner.join();
                rt.join_finished();
                res
            }
            None => self.inner.join(),
        }
    }
}

/// Spawns a managed thread whose id is the caller's id extended with the
/// caller's next child index.
///
/// If the caller is itself unmanaged the child is unmanaged too. On failure
/// the caller's child counter is left untouched.
pub fn spawn<F, T>(f: F) -> io::Result<JoinHandle<T>>
where
    F: FnOnce() -> T + Send + 'static,
    T: Send + 'static,
{
    let Some(parent) = current_ctx() else {
        let inner = thread::Builder::new().spawn(f)?;
        return Ok(JoinHandle {
            inner,
            dti: DetThreadId::Unmanaged,
            runtime: None,
        });
    };

    let index = parent.children_spawned.get() + 1;
    let dti = parent.dti.child(index);
    let runtime = parent.runtime.clone();
    runtime.thread_started();

    let child_rt = runtime.clone();
    let child_dti = dti.clone();
    let spawned = thread::Builder::new().spawn(move || {
        let _guard = enter(child_dti, child_rt);
        f()
    });
    match spawned {
        Ok(inner) => {
            parent.children_spawned.set(index);
            Ok(JoinHandle {
                inner,
                dti,
                runtime: Some(runtime),
            })
        }
        Err(e) => {
            runtime.thread_exited();
            Err(e)
        }
    }
}
