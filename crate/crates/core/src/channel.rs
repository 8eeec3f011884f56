//! Unbounded MPSC channels whose every operation goes through the runtime.
//!
//! Messages travel inside an [`Envelope`] carrying the sender's thread id.
//! In replay mode a receive looks up which sender the log says it got a
//! message from and keeps receiving, buffering messages from anyone else,
//! until that sender's message shows up.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, ThreadId};
use std::time::{Duration, Instant};

use crossbeam_channel as cb;

use crate::config::RrMode;
use crate::id::{current_dti, DetChannelId, DetThreadId};
use crate::log::{ChannelFlavor, EventStatus, EventType, LogEntry};
use crate::replay::DesyncReason;
use crate::runtime::{Observed, Runtime, Step};

/// Longest single wait inside a replayed receive, so that a desync raised
/// by another thread is noticed promptly.
const POLL_SLICE: Duration = Duration::from_millis(100);

/// A payload tagged with the id of the thread that sent it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope<T> {
    pub sender: DetThreadId,
    pub payload: T,
}

#[derive(PartialEq, Eq, Clone, Copy)]
pub struct SendError<T>(pub T);

impl<T> fmt::Debug for SendError<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SendError(..)")
    }
}

impl<T> fmt::Display for SendError<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("sending on a disconnected channel")
    }
}

impl<T> std::error::Error for SendError<T> {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("receiving on an empty and disconnected channel")]
pub struct RecvError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TryRecvError {
    #[error("receiving on an empty channel")]
    Empty,
    #[error("receiving on an empty and disconnected channel")]
    Disconnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum RecvTimeoutError {
    #[error("timed out waiting on channel")]
    Timeout,
    #[error("channel is empty and disconnected")]
    Disconnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("select set is empty or every channel in it is disconnected")]
pub struct SelectError;

struct ChannelMeta {
    id: DetChannelId,
    data_type: Box<str>,
    flavor: ChannelFlavor,
    unmanaged_sender: Mutex<Option<ThreadId>>,
    warned: AtomicBool,
}

/// Creates a channel under the current thread's runtime, or the process
/// runtime for unmanaged threads.
pub fn channel<T>() -> (Sender<T>, Receiver<T>) {
    let rt = crate::id::current_ctx()
        .map(|c| c.runtime.clone())
        .unwrap_or_else(|| Runtime::global().clone());
    rt.channel()
}

pub(crate) fn make_channel<T>(rt: Arc<Runtime>, id: DetChannelId) -> (Sender<T>, Receiver<T>) {
    let (tx, rx) = cb::unbounded();
    let meta = Arc::new(ChannelMeta {
        id,
        data_type: short_type_name(std::any::type_name::<T>()).into(),
        flavor: ChannelFlavor::LocalUnbounded,
        unmanaged_sender: Mutex::new(None),
        warned: AtomicBool::new(false),
    });
    (
        Sender {
            inner: tx,
            meta: meta.clone(),
            rt: rt.clone(),
        },
        Receiver {
            inner: rx,
            buffer: RefCell::new(VecDeque::new()),
            meta,
            rt,
        },
    )
}

/// `alloc::vec::Vec<alloc::string::String>` becomes `Vec<String>`.
pub(crate) fn short_type_name(full: &str) -> String {
    let mut out = String::with_capacity(full.len());
    let mut token = String::new();
    let flush = |token: &mut String, out: &mut String| {
        out.push_str(token.rsplit("::").next().unwrap_or(""));
        token.clear();
    };
    for ch in full.chars() {
        if ch.is_alphanumeric() || ch == '_' || ch == ':' {
            token.push(ch);
        } else {
            flush(&mut token, &mut out);
            out.push(ch);
        }
    }
    flush(&mut token, &mut out);
    out
}

pub struct Sender<T> {
    inner: cb::Sender<Envelope<T>>,
    meta: Arc<ChannelMeta>,
    rt: Arc<Runtime>,
}

impl<T> Clone for Sender<T> {
    fn clone(&self) -> Self {
        Sender {
            inner: self.inner.clone(),
            meta: self.meta.clone(),
            rt: self.rt.clone(),
        }
    }
}

impl<T> fmt::Debug for Sender<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Sender").field("id", &self.meta.id).finish()
    }
}

impl<T> Sender<T> {
    pub fn id(&self) -> &DetChannelId {
        &self.meta.id
    }

    /// True once two different unmanaged threads have sent on this channel.
    pub fn has_unmanaged_conflict(&self) -> bool {
        self.meta.warned.load(Ordering::Acquire)
    }

    fn observed(&self) -> Observed<'_> {
        Observed {
            event_type: EventType::Send,
            flavor: self.meta.flavor,
            data_type: &self.meta.data_type,
            channels: std::slice::from_ref(&self.meta.id),
        }
    }

    fn note_unmanaged(&self, sender: &DetThreadId) {
        if !sender.is_unmanaged() || self.meta.warned.load(Ordering::Relaxed) {
            return;
        }
        let me = thread::current().id();
        let mut seen = self
            .meta
            .unmanaged_sender
            .lock()
            .unwrap_or_else(|e| e.into_inner());
        match *seen {
            None => *seen = Some(me),
            Some(first) if first != me => {
                if !self.meta.warned.swap(true, Ordering::AcqRel) {
                    eprintln!(
                        "rr-warning: several unmanaged threads send on channel {}; \
                         their messages cannot be told apart and replay may not be deterministic",
                        self.meta.id
                    );
                }
            }
            Some(_) => {}
        }
    }

    /// Never blocks. Fails only when the receiver is gone.
    pub fn send(&self, payload: T) -> Result<(), SendError<T>> {
        let env = Envelope {
            sender: current_dti(),
            payload,
        };
        match self.rt.mode() {
            RrMode::Noop => self.inner.send(env).map_err(|e| SendError(e.0.payload)),
            RrMode::Record => {
                self.note_unmanaged(&env.sender);
                let res = self.inner.send(env).map_err(|e| SendError(e.0.payload));
                let status = match res {
                    Ok(()) => EventStatus::SendOk,
                    Err(_) => EventStatus::RecvError,
                };
                self.rt.record(&self.observed(), status);
                res
            }
            RrMode::Replay => {
                self.note_unmanaged(&env.sender);
                // Sends need no forcing; the step only checks sync and may park.
                let _ = self.rt.replay_step(&self.observed());
                self.inner.send(env).map_err(|e| SendError(e.0.payload))
            }
        }
    }
}

/// Failure to force a logged receive.
enum Abort {
    Desync(DesyncReason),
    /// Some other thread desynced while we were waiting.
    Abandoned,
}

pub struct Receiver<T> {
    inner: cb::Receiver<Envelope<T>>,
    /// Messages pulled off the channel while looking for a different sender,
    /// in arrival order.
    buffer: RefCell<VecDeque<Envelope<T>>>,
    meta: Arc<ChannelMeta>,
    rt: Arc<Runtime>,
}

impl<T> fmt::Debug for Receiver<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Receiver")
            .field("id", &self.meta.id)
            .field("buffered", &self.buffered_len())
            .finish()
    }
}

impl<T> Receiver<T> {
    pub fn id(&self) -> &DetChannelId {
        &self.meta.id
    }

    pub fn data_type(&self) -> &str {
        &self.meta.data_type
    }

    /// Messages held back by replay, waiting to be delivered.
    pub fn buffered_len(&self) -> usize {
        self.buffer.borrow().len()
    }

    fn observed(&self, event_type: EventType) -> Observed<'_> {
        Observed {
            event_type,
            flavor: self.meta.flavor,
            data_type: &self.meta.data_type,
            channels: std::slice::from_ref(&self.meta.id),
        }
    }

    pub fn recv(&self) -> Result<T, RecvError> {
        self.recv_envelope().map(|e| e.payload)
    }

    pub fn try_recv(&self) -> Result<T, TryRecvError> {
        self.try_recv_envelope().map(|e| e.payload)
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<T, RecvTimeoutError> {
        self.recv_timeout_envelope(timeout).map(|e| e.payload)
    }

    pub fn recv_envelope(&self) -> Result<Envelope<T>, RecvError> {
        match self.rt.mode() {
            RrMode::Noop => self.inner.recv().map_err(|_| RecvError),
            RrMode::Record => {
                let res = self.inner.recv().map_err(|_| RecvError);
                let status = match &res {
                    Ok(env) => EventStatus::Success(env.sender.clone()),
                    Err(_) => EventStatus::RecvError,
                };
                self.rt.record(&self.observed(EventType::Recv), status);
                res
            }
            RrMode::Replay => match self.rt.replay_step(&self.observed(EventType::Recv)) {
                Step::Native => self.native_recv(),
                Step::Forced(entry) => match &entry.status {
                    EventStatus::Success(sender) => {
                        self.forced(entry, sender).or_else(|()| self.native_recv())
                    }
                    _ => Err(RecvError),
                },
            },
        }
    }

    pub fn try_recv_envelope(&self) -> Result<Envelope<T>, TryRecvError> {
        let native = |r: Result<Envelope<T>, cb::TryRecvError>| {
            r.map_err(|e| match e {
                cb::TryRecvError::Empty => TryRecvError::Empty,
                cb::TryRecvError::Disconnected => TryRecvError::Disconnected,
            })
        };
        match self.rt.mode() {
            RrMode::Noop => native(self.inner.try_recv()),
            RrMode::Record => {
                let res = native(self.inner.try_recv());
                let status = match &res {
                    Ok(env) => EventStatus::Success(env.sender.clone()),
                    Err(TryRecvError::Empty) => EventStatus::Empty,
                    Err(TryRecvError::Disconnected) => EventStatus::RecvError,
                };
                self.rt.record(&self.observed(EventType::TryRecv), status);
                res
            }
            RrMode::Replay => match self.rt.replay_step(&self.observed(EventType::TryRecv)) {
                Step::Native => self.native_try_recv(),
                Step::Forced(entry) => match &entry.status {
                    EventStatus::Success(sender) => self
                        .forced(entry, sender)
                        .or_else(|()| self.native_try_recv()),
                    EventStatus::Empty => Err(TryRecvError::Empty),
                    _ => Err(TryRecvError::Disconnected),
                },
            },
        }
    }

    pub fn recv_timeout_envelope(
        &self,
        timeout: Duration,
    ) -> Result<Envelope<T>, RecvTimeoutError> {
        let native = |r: Result<Envelope<T>, cb::RecvTimeoutError>| {
            r.map_err(|e| match e {
                cb::RecvTimeoutError::Timeout => RecvTimeoutError::Timeout,
                cb::RecvTimeoutError::Disconnected => RecvTimeoutError::Disconnected,
            })
        };
        match self.rt.mode() {
            RrMode::Noop => native(self.inner.recv_timeout(timeout)),
            RrMode::Record => {
                let res = native(self.inner.recv_timeout(timeout));
                let status = match &res {
                    Ok(env) => EventStatus::Success(env.sender.clone()),
                    Err(RecvTimeoutError::Timeout) => EventStatus::Timeout,
                    Err(RecvTimeoutError::Disconnected) => EventStatus::RecvError,
                };
                self.rt
                    .record(&self.observed(EventType::TimeoutRecv), status);
                res
            }
            RrMode::Replay => match self.rt.replay_step(&self.observed(EventType::TimeoutRecv)) {
                Step::Native => self.native_recv_timeout(timeout),
                Step::Forced(entry) => match &entry.status {
                    EventStatus::Success(sender) => self
                        .forced(entry, sender)
                        .or_else(|()| self.native_recv_timeout(timeout)),
                    EventStatus::Timeout => Err(RecvTimeoutError::Timeout),
                    _ => Err(RecvTimeoutError::Disconnected),
                },
            },
        }
    }

    /// Delivers the logged sender's next message, desyncing on failure.
    /// `Err(())` means the caller must fall back to the native operation.
    fn forced(&self, entry: &LogEntry, sender: &DetThreadId) -> Result<Envelope<T>, ()> {
        match self.rr_recv(sender) {
            Ok(env) => Ok(env),
            Err(Abort::Desync(reason)) => {
                self.rt
                    .desync(reason, &entry.thread, entry.event_id, &entry.channels);
                Err(())
            }
            Err(Abort::Abandoned) => Err(()),
        }
    }

    fn take_buffered_from(&self, sender: &DetThreadId) -> Option<Envelope<T>> {
        let mut buf = self.buffer.borrow_mut();
        let pos = buf.iter().position(|e| &e.sender == sender)?;
        buf.remove(pos)
    }

    /// Receives until a message from `expected` arrives. Messages from
    /// other senders are buffered; per-sender order is kept.
    fn rr_recv(&self, expected: &DetThreadId) -> Result<Envelope<T>, Abort> {
        if let Some(env) = self.take_buffered_from(expected) {
            return Ok(env);
        }
        let limit = self.rt.config().desync_timeout;
        let start = Instant::now();
        loop {
            let elapsed = start.elapsed();
            if elapsed >= limit {
                return Err(Abort::Desync(DesyncReason::TimeoutWaitingForSender(
                    expected.clone(),
                )));
            }
            match self.inner.recv_timeout((limit - elapsed).min(POLL_SLICE)) {
                Ok(env) if &env.sender == expected => return Ok(env),
                Ok(env) => self.buffer.borrow_mut().push_back(env),
                Err(cb::RecvTimeoutError::Timeout) => {
                    if self.rt.is_native() {
                        return Err(Abort::Abandoned);
                    }
                }
                Err(cb::RecvTimeoutError::Disconnected) => {
                    return Err(Abort::Desync(DesyncReason::SenderDisconnected(
                        expected.clone(),
                    )))
                }
            }
        }
    }

    fn pop_buffered(&self) -> Option<Envelope<T>> {
        self.buffer.borrow_mut().pop_front()
    }

    fn native_recv(&self) -> Result<Envelope<T>, RecvError> {
        match self.pop_buffered() {
            Some(env) => Ok(env),
            None => self.inner.recv().map_err(|_| RecvError),
        }
    }

    fn native_try_recv(&self) -> Result<Envelope<T>, TryRecvError> {
        match self.pop_buffered() {
            Some(env) => Ok(env),
            None => self.inner.try_recv().map_err(|e| match e {
                cb::TryRecvError::Empty => TryRecvError::Empty,
                cb::TryRecvError::Disconnected => TryRecvError::Disconnected,
            }),
        }
    }

    fn native_recv_timeout(&self, timeout: Duration) -> Result<Envelope<T>, RecvTimeoutError> {
        match self.pop_buffered() {
            Some(env) => Ok(env),
            None => self.inner.recv_timeout(timeout).map_err(|e| match e {
                cb::RecvTimeoutError::Timeout => RecvTimeoutError::Timeout,
                cb::RecvTimeoutError::Disconnected => RecvTimeoutError::Disconnected,
            }),
        }
    }
}

/// A set of receivers to wait on. Indices follow insertion order.
pub struct Select<'a, T> {
    receivers: Vec<&'a Receiver<T>>,
}

impl<T> Default for Select<'_, T> {
    fn default() -> Self {
        Select {
            receivers: Vec::new(),
        }
    }
}

impl<'a, T> Select<'a, T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a receiver and returns its index.
    pub fn add(&mut self, receiver: &'a Receiver<T>) -> usize {
        self.receivers.push(receiver);
        self.receivers.len() - 1
    }

    pub fn len(&self) -> usize {
        self.receivers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.receivers.is_empty()
    }

    /// Blocks until one receiver yields a message.
    pub fn select(&mut self) -> Result<(usize, T), SelectError> {
        self.select_envelope().map(|(i, e)| (i, e.payload))
    }

    pub fn select_envelope(&mut self) -> Result<(usize, Envelope<T>), SelectError> {
        let Some(first) = self.receivers.first() else {
            return Err(SelectError);
        };
        let rt = first.rt.clone();
        let channels: Vec<DetChannelId> = self.receivers.iter().map(|r| r.id().clone()).collect();
        let observed = Observed {
            event_type: EventType::Select,
            flavor: first.meta.flavor,
            data_type: &first.meta.data_type,
            channels: &channels,
        };
        match rt.mode() {
            RrMode::Noop => self.native_select(),
            RrMode::Record => {
                let res = self.native_select();
                let status = match &res {
                    Ok((index, env)) => EventStatus::SelectedIndex {
                        index: *index as u32,
                        sender: env.sender.clone(),
                    },
                    Err(_) => EventStatus::RecvError,
                };
                rt.record(&observed, status);
                res
            }
            RrMode::Replay => match rt.replay_step(&observed) {
                Step::Native => self.native_select(),
                Step::Forced(entry) => match &entry.status {
                    EventStatus::SelectedIndex { index, sender } => {
                        let Some(receiver) = self.receivers.get(*index as usize) else {
                            rt.desync(
                                DesyncReason::SelectIndexOutOfRange {
                                    index: *index,
                                    len: self.receivers.len(),
                                },
                                &entry.thread,
                                entry.event_id,
                                &channels,
                            );
                            return self.native_select();
                        };
                        match receiver.forced(entry, sender) {
                            Ok(env) => Ok((*index as usize, env)),
                            Err(()) => self.native_select(),
                        }
                    }
                    _ => Err(SelectError),
                },
            },
        }
    }

    fn native_select(&self) -> Result<(usize, Envelope<T>), SelectError> {
        for (i, r) in self.receivers.iter().enumerate() {
            if let Some(env) = r.pop_buffered() {
                return Ok((i, env));
            }
        }
        let mut sel = cb::Select::new();
        for r in &self.receivers {
            sel.recv(&r.inner);
        }
        let mut open = self.receivers.len();
        while open > 0 {
            let oper = sel.select();
            let i = oper.index();
            match oper.recv(&self.receivers[i].inner) {
                Ok(env) => return Ok((i, env)),
                Err(_) => {
                    sel.remove(i);
                    open -= 1;
                }
            }
        }
        Err(SelectError)
    }
}
