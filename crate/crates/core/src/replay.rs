//! Replay state: the loaded log, the process-wide desync flag and the
//! end-of-log parking lot.

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::Duration;

use crate::id::{DetChannelId, DetThreadId};
use crate::log::{ChannelFlavor, EventType, LogEntry, RecordLog};

/// How often parked threads re-check the desync flag.
const PARK_RECHECK: Duration = Duration::from_millis(100);

/// Why replay gave up on the log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DesyncReason {
    EventTypeMismatch {
        expected: EventType,
        observed: EventType,
    },
    ChannelMismatch,
    FlavorMismatch,
    /// The logged sender's message did not arrive within the desync timeout.
    TimeoutWaitingForSender(DetThreadId),
    /// Every sender hung up before the logged sender's message arrived.
    SenderDisconnected(DetThreadId),
    /// No entry for the event. Only a desync under the error-out policy;
    /// otherwise the thread parks.
    EndOfLog,
    SelectIndexOutOfRange {
        index: u32,
        len: usize,
    },
}

impl fmt::Display for DesyncReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesyncReason::EventTypeMismatch { expected, observed } => {
                write!(
                    f,
                    "EventTypeMismatch(expected={expected},observed={observed})"
                )
            }
            DesyncReason::ChannelMismatch => f.write_str("ChannelMismatch"),
            DesyncReason::FlavorMismatch => f.write_str("FlavorMismatch"),
            DesyncReason::TimeoutWaitingForSender(s) => write!(f, "TimeoutWaitingForSender({s})"),
            DesyncReason::SenderDisconnected(s) => write!(f, "SenderDisconnected({s})"),
            DesyncReason::EndOfLog => f.write_str("EndOfLog"),
            DesyncReason::SelectIndexOutOfRange { index, len } => {
                write!(f, "SelectIndexOutOfRange(index={index},len={len})")
            }
        }
    }
}

/// Compares what the program is doing against what the log says it did.
pub fn check_sync(
    entry: &LogEntry,
    event_type: EventType,
    channels: &[DetChannelId],
    flavor: ChannelFlavor,
) -> Result<(), DesyncReason> {
    if entry.event_type != event_type {
        return Err(DesyncReason::EventTypeMismatch {
            expected: entry.event_type,
            observed: event_type,
        });
    }
    if entry.channels != channels {
        return Err(DesyncReason::ChannelMismatch);
    }
    if entry.flavor != flavor {
        return Err(DesyncReason::FlavorMismatch);
    }
    Ok(())
}

/// One line for every desync transition, written to stderr.
pub fn desync_warning(
    reason: &DesyncReason,
    thread: &DetThreadId,
    event_id: u64,
    channels: &[DetChannelId],
) -> String {
    format!(
        "rr-desync: {reason} thread={thread} event={event_id} channel={}",
        render_channels(channels)
    )
}

pub(crate) fn render_channels(channels: &[DetChannelId]) -> String {
    match channels {
        [one] => one.to_string(),
        many => {
            let parts: Vec<String> = many.iter().map(ToString::to_string).collect();
            format!("[{}]", parts.join(","))
        }
    }
}

/// Managed threads known to the replayer and how many of them can make no
/// progress on their own.
#[derive(Debug, Default)]
struct Liveness {
    live: usize,
    parked: usize,
    joining: usize,
}

pub(crate) struct Replayer {
    log: RecordLog,
    desynced: AtomicBool,
    warnings: AtomicUsize,
    liveness: Mutex<Liveness>,
    wake: Condvar,
    unmanaged_clock: Mutex<u64>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Replayer {
    pub(crate) fn new(log: RecordLog) -> Self {
        Replayer {
            log,
            desynced: AtomicBool::new(false),
            warnings: AtomicUsize::new(0),
            liveness: Mutex::default(),
            wake: Condvar::new(),
            unmanaged_clock: Mutex::new(0),
        }
    }

    pub(crate) fn log(&self) -> &RecordLog {
        &self.log
    }

    pub(crate) fn is_desynced(&self) -> bool {
        self.desynced.load(Ordering::Acquire)
    }

    pub(crate) fn warnings(&self) -> usize {
        self.warnings.load(Ordering::Acquire)
    }

    pub(crate) fn next_unmanaged_event(&self) -> u64 {
        let mut clock = lock(&self.unmanaged_clock);
        let id = *clock;
        *clock += 1;
        id
    }

    pub(crate) fn lookup(&self, thread: &DetThreadId, event_id: u64) -> Option<&LogEntry> {
        self.log.get(thread, event_id)
    }

    /// Flips the flag. Returns true for the caller that performed the
    /// transition.
    pub(crate) fn mark_desynced(&self, warned: bool) -> bool {
        let first = !self.desynced.swap(true, Ordering::AcqRel);
        if first && warned {
            self.warnings.fetch_add(1, Ordering::AcqRel);
        }
        // Taking the lock orders the store before any waiter's re-check.
        let _g = lock(&self.liveness);
        self.wake.notify_all();
        first
    }

    /// Blocks until the replayer desyncs, either because another thread
    /// diverged or because every managed thread is stuck.
    pub(crate) fn park_at_end_of_log(&self) {
        let mut st = lock(&self.liveness);
        st.parked += 1;
        self.release_if_quiescent(&st);
        while !self.is_desynced() {
            st = self
                .wake
                .wait_timeout(st, PARK_RECHECK)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        st.parked -= 1;
    }

    fn release_if_quiescent(&self, st: &Liveness) {
        if st.parked > 0 && st.parked + st.joining >= st.live {
            self.desynced.store(true, Ordering::Release);
            self.wake.notify_all();
        }
    }

    pub(crate) fn thread_started(&self) {
        lock(&self.liveness).live += 1;
    }

    pub(crate) fn thread_exited(&self) {
        let mut st = lock(&self.liveness);
        st.live = st.live.saturating_sub(1);
        self.release_if_quiescent(&st);
    }

    pub(crate) fn join_started(&self) {
        let mut st = lock(&self.liveness);
        st.joining += 1;
        self.release_if_quiescent(&st);
    }

    pub(crate) fn join_finished(&self) {
        let mut st = lock(&self.liveness);
        st.joining = st.joining.saturating_sub(1);
    }

    pub(crate) fn parked(&self) -> usize {
        lock(&self.liveness).parked
    }
}
