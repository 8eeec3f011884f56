//! The per-process record/replay runtime.
//!
//! A runtime is created once, normally from the environment, and shared by
//! every channel created while it is current. Tests build their own with
//! [`Runtime::new`] and run code under it with [`Runtime::run_main`].

use std::process;
use std::sync::{Arc, Mutex, OnceLock};

use crate::channel::{Receiver, Sender};
use crate::config::{Config, ConfigError, DesyncPolicy, RrMode};
use crate::id::{self, DetChannelId, DetThreadId};
use crate::log::{ChannelFlavor, EventStatus, EventType, LogEntry, LogError, RecordLog};
use crate::record::{Recorder, Segment};
use crate::replay::{check_sync, desync_warning, DesyncReason, Replayer};

/// Exit status used when replay diverges under [`DesyncPolicy::ErrorOut`].
pub const DESYNC_EXIT_CODE: i32 = 86;

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot load replay log: {0}")]
    Log(#[from] LogError),
}

/// Whether an operation consulted the log or ran natively.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpPath {
    Replayed,
    Native,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpTrace {
    pub thread: DetThreadId,
    pub event_type: EventType,
    pub path: OpPath,
}

/// What was observed at a channel operation, before its outcome is known.
pub(crate) struct Observed<'a> {
    pub(crate) event_type: EventType,
    pub(crate) flavor: ChannelFlavor,
    pub(crate) data_type: &'a str,
    pub(crate) channels: &'a [DetChannelId],
}

/// Outcome of consulting the log for one event.
pub(crate) enum Step<'a> {
    Native,
    Forced(&'a LogEntry),
}

pub struct Runtime {
    config: Config,
    recorder: Option<Recorder>,
    replayer: Option<Replayer>,
    trace: Option<Mutex<Vec<OpTrace>>>,
    first_desync: OnceLock<String>,
}

static GLOBAL: OnceLock<Arc<Runtime>> = OnceLock::new();

impl std::fmt::Debug for Runtime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runtime")
            .field("mode", &self.config.mode)
            .field("desynced", &self.is_desynced())
            .finish_non_exhaustive()
    }
}

impl Runtime {
    /// Builds a runtime. In replay mode the log is read from
    /// `config.record_file`.
    pub fn new(config: Config) -> Result<Arc<Self>, RuntimeError> {
        let log = match config.mode {
            RrMode::Replay => Some(RecordLog::load(&config.record_file)?),
            _ => None,
        };
        Ok(Self::build(config, log))
    }

    /// A replaying runtime over an in-memory log.
    pub fn replaying(config: Config, log: RecordLog) -> Arc<Self> {
        Self::build(
            Config {
                mode: RrMode::Replay,
                ..config
            },
            Some(log),
        )
    }

    fn build(config: Config, log: Option<RecordLog>) -> Arc<Self> {
        Arc::new(Runtime {
            recorder: (config.mode == RrMode::Record).then(Recorder::default),
            replayer: log.map(Replayer::new),
            trace: config.trace_ops.then(|| Mutex::new(Vec::new())),
            first_desync: OnceLock::new(),
            config,
        })
    }

    pub fn from_env() -> Result<Arc<Self>, RuntimeError> {
        Self::new(Config::from_env()?)
    }

    /// The process runtime, created from the environment on first use.
    ///
    /// Panics if the environment holds an invalid configuration or names a
    /// replay log that cannot be read.
    pub fn global() -> &'static Arc<Runtime> {
        GLOBAL.get_or_init(|| match Self::from_env() {
            Ok(rt) => rt,
            Err(e) => panic!("lwrr: {e}"),
        })
    }

    pub fn mode(&self) -> RrMode {
        self.config.mode
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn channel<T>(self: &Arc<Self>) -> (Sender<T>, Receiver<T>) {
        crate::channel::make_channel(self.clone(), id::next_channel_id())
    }

    /// Runs `f` on the current thread as the main thread `[]` of this
    /// runtime. When `f` returns, threads parked at the end of the log are
    /// released so the process can exit.
    pub fn run_main<T>(self: &Arc<Self>, f: impl FnOnce() -> T) -> T {
        struct Teardown<'a>(&'a Runtime);
        impl Drop for Teardown<'_> {
            fn drop(&mut self) {
                self.0.release_waiters();
            }
        }

        let _teardown = Teardown(self);
        self.thread_started();
        let _ctx = id::enter(DetThreadId::main(), self.clone());
        f()
    }

    /// Everything recorded so far. `None` unless recording.
    pub fn recorded_log(&self) -> Option<RecordLog> {
        self.recorder.as_ref().map(Recorder::snapshot)
    }

    /// In record mode, writes the log to the configured file and returns
    /// its size. Does nothing in other modes.
    pub fn flush(&self) -> Result<Option<u64>, LogError> {
        match &self.recorder {
            Some(rec) => rec.snapshot().save(&self.config.record_file).map(Some),
            None => Ok(None),
        }
    }

    /// The log being replayed.
    pub fn replay_log(&self) -> Option<&RecordLog> {
        self.replayer.as_ref().map(Replayer::log)
    }

    /// Whether replay diverged from the log. Threads released at the end
    /// of the log run natively too, but that does not count.
    pub fn is_desynced(&self) -> bool {
        self.desync_warnings() > 0
    }

    /// Whether replay has stopped consulting the log, for any reason.
    pub(crate) fn is_native(&self) -> bool {
        self.replayer.as_ref().is_some_and(Replayer::is_desynced)
    }

    /// Number of desync warnings emitted, 0 or 1.
    pub fn desync_warnings(&self) -> usize {
        self.replayer.as_ref().map_or(0, Replayer::warnings)
    }

    /// Threads currently parked at the end of the log.
    pub fn parked_threads(&self) -> usize {
        self.replayer.as_ref().map_or(0, Replayer::parked)
    }

    /// The warning line of the desync transition, if one happened.
    pub fn desync_report(&self) -> Option<&str> {
        self.first_desync.get().map(String::as_str)
    }

    /// Operation trace, when enabled with `Config::trace_ops`.
    pub fn op_trace(&self) -> Vec<OpTrace> {
        self.trace
            .as_ref()
            .map(|t| t.lock().unwrap_or_else(|e| e.into_inner()).clone())
            .unwrap_or_default()
    }

    /// Wakes every thread parked at the end of the log. They continue
    /// natively. No warning is emitted: this is the normal exit path.
    pub fn release_waiters(&self) {
        if let Some(rep) = &self.replayer {
            rep.mark_desynced(false);
        }
    }

    pub(crate) fn new_segment(&self) -> Option<Segment> {
        self.recorder.as_ref().map(Recorder::new_segment)
    }

    pub(crate) fn thread_started(&self) {
        if let Some(rep) = &self.replayer {
            rep.thread_started();
        }
    }

    pub(crate) fn thread_exited(&self) {
        if let Some(rep) = &self.replayer {
            rep.thread_exited();
        }
    }

    pub(crate) fn join_started(&self) {
        if let Some(rep) = &self.replayer {
            rep.join_started();
        }
    }

    pub(crate) fn join_finished(&self) {
        if let Some(rep) = &self.replayer {
            rep.join_finished();
        }
    }

    fn push_trace(&self, thread: DetThreadId, event_type: EventType, path: OpPath) {
        if let Some(t) = &self.trace {
            t.lock().unwrap_or_else(|e| e.into_inner()).push(OpTrace {
                thread,
                event_type,
                path,
            });
        }
    }

    /// Appends an entry for the calling thread at its next logical time.
    pub(crate) fn record(&self, ev: &Observed<'_>, status: EventStatus) {
        let Some(rec) = &self.recorder else { return };
        let build = |thread: DetThreadId, event_id: u64| LogEntry {
            thread,
            event_id,
            event_type: ev.event_type,
            flavor: ev.flavor,
            data_type: ev.data_type.to_string(),
            status,
            channels: ev.channels.to_vec(),
        };
        match id::current_ctx() {
            Some(ctx) => {
                let event_id = ctx.tick();
                if let Some(seg) = &ctx.segment {
                    Recorder::append(seg, build(ctx.dti.clone(), event_id));
                }
            }
            None => rec.append_unmanaged(|event_id| build(DetThreadId::Unmanaged, event_id)),
        }
    }

    /// Advances the caller's clock and decides how the event must run.
    ///
    /// Parks the caller if the log has no entry for the event, and desyncs
    /// if the entry disagrees with what the program is doing.
    pub(crate) fn replay_step(&self, ev: &Observed<'_>) -> Step<'_> {
        let rep = self
            .replayer
            .as_ref()
            .expect("replay step on a runtime that is not replaying");
        let (thread, event_id) = match id::current_ctx() {
            Some(ctx) => (ctx.dti.clone(), ctx.tick()),
            None => (DetThreadId::Unmanaged, rep.next_unmanaged_event()),
        };
        if rep.is_desynced() {
            self.push_trace(thread, ev.event_type, OpPath::Native);
            return Step::Native;
        }

        let Some(entry) = rep.lookup(&thread, event_id) else {
            match self.config.desync_policy {
                DesyncPolicy::ErrorOut => {
                    self.desync(DesyncReason::EndOfLog, &thread, event_id, ev.channels)
                }
                DesyncPolicy::KeepGoing => rep.park_at_end_of_log(),
            }
            self.push_trace(thread, ev.event_type, OpPath::Native);
            return Step::Native;
        };

        let synced = check_sync(entry, ev.event_type, ev.channels, ev.flavor).and_then(|()| {
            if entry.status.allowed_for(ev.event_type) {
                Ok(())
            } else {
                Err(DesyncReason::EventTypeMismatch {
                    expected: entry.event_type,
                    observed: ev.event_type,
                })
            }
        });
        if let Err(reason) = synced {
            self.desync(reason, &thread, event_id, ev.channels);
            self.push_trace(thread, ev.event_type, OpPath::Native);
            return Step::Native;
        }
        self.push_trace(thread, ev.event_type, OpPath::Replayed);
        Step::Forced(entry)
    }

    /// Switches the whole process to native execution. Only the first
    /// caller reports; under the error-out policy it also exits.
    pub(crate) fn desync(
        &self,
        reason: DesyncReason,
        thread: &DetThreadId,
        event_id: u64,
        channels: &[DetChannelId],
    ) {
        let Some(rep) = &self.replayer else { return };
        if rep.mark_desynced(true) {
            let line = desync_warning(&reason, thread, event_id, channels);
            eprintln!("{line}");
            let _ = self.first_desync.set(line);
            if self.config.desync_policy == DesyncPolicy::ErrorOut {
                process::exit(DESYNC_EXIT_CODE);
            }
        }
    }
}
