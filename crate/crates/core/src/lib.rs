//! Lightweight record-and-replay for message-passing programs.
//!
//! `lwrr` wraps unbounded MPSC channels. In record mode it logs, for every
//! channel operation, which thread a received message came from and which
//! receiver a select picked. In replay mode it forces the same arrival
//! order and the same select outcomes. Payloads are never logged.
//!
//! Threads must be started with [`spawn`] to get a deterministic id; others
//! are treated as unmanaged.
//!
//! ```no_run
//! lwrr::run_main(|| {
//!     let (tx, rx) = lwrr::channel::<u32>();
//!     let worker = lwrr::spawn(move || tx.send(7).unwrap()).unwrap();
//!     assert_eq!(rx.recv(), Ok(7));
//!     worker.join().unwrap();
//! });
//! ```
//!
//! The mode comes from `RR_CHANNEL_MODE` (`noop`, `record`, `replay`), the
//! log path from `RR_RECORD_FILE`, the reaction to divergence from
//! `RR_DESYNC_MODE` (`error`, `keep_going`) and the replay receive timeout
//! from `RR_DESYNC_TIMEOUT_MS`.

pub mod analysis;
pub mod channel;
pub mod config;
pub mod id;
pub mod log;
mod record;
pub mod replay;
pub mod runtime;

pub use channel::{
    channel, Envelope, Receiver, RecvError, RecvTimeoutError, Select, SelectError, SendError,
    Sender, TryRecvError,
};
pub use config::{Config, ConfigError, DesyncPolicy, RrMode};
pub use id::{current_dti, next_channel_id, spawn, DetChannelId, DetThreadId, JoinHandle};
pub use log::{ChannelFlavor, EventStatus, EventType, LogEntry, LogError, RecordLog};
pub use replay::DesyncReason;
pub use runtime::{OpPath, OpTrace, Runtime, RuntimeError, DESYNC_EXIT_CODE};

/// Runs `f` as the main thread under the process runtime, then writes the
/// log if recording.
///
/// Panics if the environment configuration is invalid.
pub fn run_main<T>(f: impl FnOnce() -> T) -> T {
    let rt = Runtime::global();
    let out = rt.run_main(f);
    if let Err(e) = rt.flush() {
        eprintln!("lwrr: failed to write record log: {e}");
    }
    out
}
