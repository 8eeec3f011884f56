//! Running a program repeatedly under a given record/replay mode and
//! classifying how each run ended.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use lwrr::config::{DESYNC_MODE_VAR, DESYNC_TIMEOUT_VAR, MODE_VAR, RECORD_FILE_VAR};
use lwrr::{DesyncPolicy, RrMode};
use sha2::{Digest, Sha256};

pub const DEFAULT_TIME_LIMIT: Duration = Duration::from_secs(30);
pub const DEFAULT_MAX_TRIES: usize = 100;

const POLL: Duration = Duration::from_millis(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Outcome {
    Expected,
    Unexpected,
    Crash,
    Timeout,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [
        Outcome::Expected,
        Outcome::Unexpected,
        Outcome::Crash,
        Outcome::Timeout,
    ];
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Expected => "EXPECTED",
            Outcome::Unexpected => "UNEXPECTED",
            Outcome::Crash => "CRASH",
            Outcome::Timeout => "TIMEOUT",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("no command given")]
    EmptyCommand,
    #[error("cannot start `{program}`: {source}")]
    Spawn {
        program: String,
        source: std::io::Error,
    },
    #[error("replay mode needs a log (--log)")]
    MissingLog,
    #[error("runs must be at least 1")]
    NoRuns,
    #[error("max tries must be at least 1")]
    NoTries,
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

/// How to launch and judge one run.
#[derive(Debug, Clone)]
pub struct RunSpec {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    pub mode: RrMode,
    /// Log written in record mode, read in replay mode.
    pub log: Option<PathBuf>,
    /// Passed through as `RR_DESYNC_MODE` when set.
    pub desync_policy: Option<DesyncPolicy>,
    /// Passed through as `RR_DESYNC_TIMEOUT_MS` when set.
    pub desync_timeout: Option<Duration>,
    pub time_limit: Duration,
    pub expected_status: i32,
    /// Lowercase hex SHA-256 the child's stdout must match to be EXPECTED.
    pub expected_stdout_sha256: Option<String>,
}

impl RunSpec {
    pub fn new(command: Vec<String>, mode: RrMode) -> Self {
        RunSpec {
            command,
            mode,
            log: None,
            desync_policy: None,
            desync_timeout: None,
            time_limit: DEFAULT_TIME_LIMIT,
            expected_status: 0,
            expected_stdout_sha256: None,
        }
    }

    pub fn with_log(mut self, log: impl Into<PathBuf>) -> Self {
        self.log = Some(log.into());
        self
    }
}

/// The result of one run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub outcome: Outcome,
    pub wall: Duration,
    /// Exit code, if the child exited normally.
    pub status: Option<i32>,
    /// Terminating signal, if any.
    pub signal: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    /// Size of the log written by a recording run.
    pub log_bytes: Option<u64>,
}

impl RunRecord {
    pub fn wall_ms(&self) -> f64 {
        self.wall.as_secs_f64() * 1000.0
    }

    /// The exit code a wrapper should return to mirror this run.
    pub fn exit_code(&self) -> i32 {
        match (self.outcome, self.status, self.signal) {
            (Outcome::Timeout, _, _) => 124,
            (_, Some(code), _) => code,
            (_, None, Some(sig)) => 128 + sig,
            _ => 1,
        }
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(unix)]
fn signal_of(status: &ExitStatus) -> Option<i32> {
    use std::os::unix::process::ExitStatusExt;
    status.signal()
}

#[cfg(not(unix))]
fn signal_of(_: &ExitStatus) -> Option<i32> {
    None
}

/// Classifies a finished run.
pub fn classify(
    status: Option<i32>,
    signal: Option<i32>,
    timed_out: bool,
    stdout: &[u8],
    spec: &RunSpec,
) -> Outcome {
    if timed_out {
        return Outcome::Timeout;
    }
    if signal.is_some() {
        return Outcome::Crash;
    }
    let stdout_ok = spec
        .expected_stdout_sha256
        .as_deref()
        .is_none_or(|want| sha256_hex(stdout).eq_ignore_ascii_case(want));
    if status == Some(spec.expected_status) && stdout_ok {
        Outcome::Expected
    } else {
        Outcome::Unexpected
    }
}

fn drain(mut pipe: impl Read + Send + 'static) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = pipe.read_to_end(&mut buf);
        buf
    })
}

fn wait_with_limit(child: &mut Child, limit: Duration) -> Result<Option<ExitStatus>, HarnessError> {
    let start = Instant::now();
    loop {
        let io = |source| HarnessError::Io {
            context: "waiting for child".into(),
            source,
        };
        if let Some(status) = child.try_wait().map_err(io)? {
            return Ok(Some(status));
        }
        if start.elapsed() >= limit {
            let _ = child.kill();
            child.wait().map_err(io)?;
            return Ok(None);
        }
        thread::sleep(POLL);
    }
}

/// Runs the command once with the record/replay environment set.
pub fn run_once(spec: &RunSpec) -> Result<RunRecord, HarnessError> {
    let (program, args) = spec
        .command
        .split_first()
        .ok_or(HarnessError::EmptyCommand)?;
    if spec.mode == RrMode::Replay && spec.log.is_none() {
        return Err(HarnessError::MissingLog);
    }
    let mut cmd = Command::new(program);
    cmd.args(args)
        .env(MODE_VAR, spec.mode.to_string())
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if let Some(log) = &spec.log {
        cmd.env(RECORD_FILE_VAR, log);
        if spec.mode == RrMode::Record {
            let _ = fs::remove_file(log);
        }
    }
    if let Some(policy) = spec.desync_policy {
        cmd.env(DESYNC_MODE_VAR, policy.to_string());
    }
    if let Some(t) = spec.desync_timeout {
        cmd.env(DESYNC_TIMEOUT_VAR, t.as_millis().max(1).to_string());
    }

    let start = Instant::now();
    let mut child = cmd.spawn().map_err(|source| HarnessError::Spawn {
        program: program.clone(),
        source,
    })?;
    let out = drain(child.stdout.take().expect("piped stdout"));
    let err = drain(child.stderr.take().expect("piped stderr"));
    let exit = wait_with_limit(&mut child, spec.time_limit)?;
    let wall = start.elapsed();
    let stdout = out.join().unwrap_or_default();
    let stderr = err.join().unwrap_or_default();

    let status = exit.and_then(|s| s.code());
    let signal = exit.as_ref().and_then(signal_of);
    let outcome = classify(status, signal, exit.is_none(), &stdout, spec);
    let log_bytes = match (&spec.log, spec.mode) {
        (Some(log), RrMode::Record) => fs::metadata(log).ok().map(|m| m.len()),
        _ => None,
    };
    Ok(RunRecord {
        outcome,
        wall,
        status,
        signal,
        stdout: String::from_utf8_lossy(&stdout).into_owned(),
        stderr: String::from_utf8_lossy(&stderr).into_owned(),
        log_bytes,
    })
}

/// A recording that ended with an expected outcome.
#[derive(Debug)]
pub struct Captured {
    pub log: PathBuf,
    pub tries: usize,
    pub run: RunRecord,
}

/// Every try of a failed capture.
#[derive(Debug)]
pub struct CaptureFailed {
    pub outcomes: Vec<Outcome>,
}

impl fmt::Display for CaptureFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "no expected execution after {} tries:",
            self.outcomes.len()
        )?;
        for (i, o) in self.outcomes.iter().enumerate() {
            write!(f, " {}={o}", i + 1)?;
        }
        Ok(())
    }
}

/// Records until a run is EXPECTED and keeps that run's log at `log`.
/// Logs of other runs are discarded.
pub fn record_until_expected(
    spec: &RunSpec,
    max_tries: usize,
    log: &Path,
) -> Result<Result<Captured, CaptureFailed>, HarnessError> {
    if max_tries == 0 {
        return Err(HarnessError::NoTries);
    }
    let dir = scratch_dir()?;
    let attempt_log = dir.path().join("attempt.log");
    let spec = RunSpec {
        mode: RrMode::Record,
        log: Some(attempt_log.clone()),
        ..spec.clone()
    };
    let mut outcomes = Vec::new();
    for tries in 1..=max_tries {
        let run = run_once(&spec)?;
        outcomes.push(run.outcome);
        if run.outcome == Outcome::Expected {
            fs::copy(&attempt_log, log).map_err(|source| HarnessError::Io {
                context: format!("cannot write {}", log.display()),
                source,
            })?;
            return Ok(Ok(Captured {
                log: log.to_path_buf(),
                tries,
                run,
            }));
        }
        let _ = fs::remove_file(&attempt_log);
    }
    Ok(Err(CaptureFailed { outcomes }))
}

fn scratch_dir() -> Result<tempfile::TempDir, HarnessError> {
    tempfile::tempdir().map_err(|source| HarnessError::Io {
        context: "cannot create scratch directory".into(),
        source,
    })
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub mode: RrMode,
    pub runs: Vec<RunRecord>,
}

impl RunReport {
    pub fn counts(&self) -> BTreeMap<Outcome, usize> {
        let mut counts: BTreeMap<Outcome, usize> = Outcome::ALL.iter().map(|o| (*o, 0)).collect();
        for r in &self.runs {
            *counts.entry(r.outcome).or_default() += 1;
        }
        counts
    }

    pub fn count(&self, outcome: Outcome) -> usize {
        self.runs.iter().filter(|r| r.outcome == outcome).count()
    }

    pub fn mean_ms(&self) -> f64 {
        if self.runs.is_empty() {
            return 0.0;
        }
        self.runs.iter().map(RunRecord::wall_ms).sum::<f64>() / self.runs.len() as f64
    }

    /// One `run=...` line per run, then a summary line.
    pub fn machine_lines(&self) -> Vec<String> {
        let mut lines: Vec<String> = self
            .runs
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let bytes = r.log_bytes.map_or("-".to_string(), |b| b.to_string());
                format!(
                    "run={} outcome={} ms={:.3} log_bytes={bytes}",
                    i + 1,
                    r.outcome,
                    r.wall_ms()
                )
            })
            .collect();
        let counts = self
            .counts()
            .iter()
            .map(|(o, n)| format!("{}={n}", o.to_string().to_lowercase()))
            .collect::<Vec<_>>()
            .join(" ");
        lines.push(format!(
            "summary mode={} runs={} {counts} mean_ms={:.3}",
            self.mode,
            self.runs.len(),
            self.mean_ms()
        ));
        lines
    }

    pub fn table(&self) -> String {
        let mut s = format!("mode: {}  runs: {}\n", self.mode, self.runs.len());
        s.push_str("outcome      count  share\n");
        for (o, n) in self.counts() {
            let share = 100.0 * n as f64 / self.runs.len().max(1) as f64;
            s.push_str(&format!("{:<11} {n:>6} {share:>5.1}%\n", o.to_string()));
        }
        s.push_str(&format!("mean wall time: {:.3} ms\n", self.mean_ms()));
        s
    }
}

/// Runs `spec` `runs` times, one after another.
pub fn stats(spec: &RunSpec, runs: usize) -> Result<RunReport, HarnessError> {
    if runs == 0 {
        return Err(HarnessError::NoRuns);
    }
    let dir;
    let spec = match (spec.mode, &spec.log) {
        (RrMode::Replay, None) => return Err(HarnessError::MissingLog),
        (RrMode::Record, None) => {
            dir = scratch_dir()?;
            spec.clone().with_log(dir.path().join("run.log"))
        }
        _ => spec.clone(),
    };
    let runs = (0..runs)
        .map(|_| run_once(&spec))
        .collect::<Result<_, _>>()?;
    Ok(RunReport {
        mode: spec.mode,
        runs,
    })
}
