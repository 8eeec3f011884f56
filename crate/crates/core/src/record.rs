//! In-memory event recording.
//!
//! Each managed thread appends to its own segment. Unmanaged threads share
//! one stream whose lock also orders their event ids.

use std::sync::{Arc, Mutex, MutexGuard};

use crate::id::DetThreadId;
use crate::log::{LogEntry, RecordLog};

pub(crate) type Segment = Arc<Mutex<Vec<LogEntry>>>;

#[derive(Default)]
struct UnmanagedStream {
    next_event: u64,
    entries: Vec<LogEntry>,
}

#[derive(Default)]
pub(crate) struct Recorder {
    segments: Mutex<Vec<Segment>>,
    unmanaged: Mutex<UnmanagedStream>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Recorder {
    pub(crate) fn new_segment(&self) -> Segment {
        let seg = Segment::default();
        lock(&self.segments).push(seg.clone());
        seg
    }

    pub(crate) fn append(segment: &Segment, entry: LogEntry) {
        lock(segment).push(entry);
    }

    /// Appends an entry for an unmanaged thread; `build` receives the
    /// event id assigned from the shared stream.
    pub(crate) fn append_unmanaged(&self, build: impl FnOnce(u64) -> LogEntry) {
        let mut stream = lock(&self.unmanaged);
        let id = stream.next_event;
        stream.next_event += 1;
        let entry = build(id);
        debug_assert_eq!(entry.thread, DetThreadId::Unmanaged);
        stream.entries.push(entry);
    }

    /// Everything recorded so far, merged into one log.
    pub(crate) fn snapshot(&self) -> RecordLog {
        let segments = lock(&self.segments).clone();
        let mut all: Vec<LogEntry> = Vec::new();
        for seg in segments {
            all.extend(lock(&seg).iter().cloned());
        }
        all.extend(lock(&self.unmanaged).entries.iter().cloned());
        all.into_iter().collect()
    }
}
