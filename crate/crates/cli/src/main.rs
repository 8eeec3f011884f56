use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use lwrr::analysis::{build_graph, dump, export_dot, find_cycles};
use lwrr::{DesyncPolicy, RecordLog, RrMode};
use lwrr_cli::harness::{
    self, record_until_expected, run_once, stats, HarnessError, RunRecord, RunSpec,
};

/// Run programs under lightweight record/replay and inspect their logs.
#[derive(Parser)]
#[command(name = "lwrr", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the command once in record mode.
    Record {
        /// Where to write the log.
        #[arg(long, default_value = lwrr::config::DEFAULT_RECORD_FILE)]
        log: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the command once, replaying a log.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the command many times and count outcomes.
    Stats {
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, value_parser = parse_mode)]
        mode: RrMode,
        /// Log to replay; required with `--mode replay`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Record until a run has the expected outcome and keep its log.
    RecordUntilExpected {
        #[arg(long, default_value_t = harness::DEFAULT_MAX_TRIES)]
        max_tries: usize,
        #[arg(long, default_value = lwrr::config::DEFAULT_RECORD_FILE)]
        log: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print a log, one entry per line.
    Dump { log: PathBuf },
    /// Write the thread/channel communication graph as DOT.
    Graph {
        #[arg(long)]
        dot: PathBuf,
        log: PathBuf,
    },
    /// Look for cycles in the communication graph. Exits 0 when there are
    /// none, 1 when there are, 2 on error.
    Cycles { log: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// Wall-clock limit per run.
    #[arg(long, default_value_t = harness::DEFAULT_TIME_LIMIT.as_millis() as u64)]
    time_limit_ms: u64,
    /// Exit status of an expected run.
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    expected_status: i32,
    /// SHA-256 (hex) the child's stdout must have for an expected run.
    #[arg(long)]
    expected_stdout_sha256: Option<String>,
    /// What replay does on divergence: `error` or `keep_going`.
    #[arg(long, value_parser = parse_policy)]
    desync_mode: Option<DesyncPolicy>,
    /// Replay receive timeout before declaring divergence.
    #[arg(long)]
    desync_timeout_ms: Option<u64>,
    /// Program and arguments.
    #[arg(required = true, trailing_var_arg = true, allow_hyphen_values = true)]
    command: Vec<String>,
}

fn parse_mode(s: &str) -> Result<RrMode, String> {
    s.parse()
        .map_err(|_| "expected noop, record or replay".to_string())
}

fn parse_policy(s: &str) -> Result<DesyncPolicy, String> {
    s.parse()
        .map_err(|_| "expected error or keep_going".to_string())
}

impl RunArgs {
    fn spec(self, mode: RrMode, log: Option<PathBuf>) -> RunSpec {
        RunSpec {
            command: self.command,
            mode,
            log,
            desync_policy: self.desync_mode,
            desync_timeout: self.desync_timeout_ms.map(Duration::from_millis),
            time_limit: Duration::from_millis(self.time_limit_ms),
            expected_status: self.expected_status,
            expected_stdout_sha256: self.expected_stdout_sha256,
        }
    }
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("lwrr: {msg}");
    ExitCode::from(2)
}

/// Echoes a child's output and mirrors its exit code.
fn passthrough(run: &RunRecord) -> ExitCode {
    print!("{}", run.stdout);
    eprint!("{}", run.stderr);
    let bytes = run.log_bytes.map_or("-".to_string(), |b| b.to_string());
    eprintln!(
        "lwrr: outcome={} ms={:.3} log_bytes={bytes}",
        run.outcome,
        run.wall_ms()
    );
    ExitCode::from(run.exit_code().clamp(0, 255) as u8)
}

fn load(path: &Path) -> Result<RecordLog, ExitCode> {
    RecordLog::load(path).map_err(fail)
}

fn harness_result<T>(r: Result<T, HarnessError>) -> Result<T, ExitCode> {
    r.map_err(fail)
}

fn run(cli: Cli) -> Result<ExitCode, ExitCode> {
    match cli.command {
        Cmd::Record { log, run } => {
            let rec = harness_result(run_once(&run.spec(RrMode::Record, Some(log))))?;
            Ok(passthrough(&rec))
        }
        Cmd::Replay { log, run } => {
            let rec = harness_result(run_once(&run.spec(RrMode::Replay, Some(log))))?;
            Ok(passthrough(&rec))
        }
        Cmd::Stats {
            runs,
            mode,
            log,
            run,
        } => {
            let report = harness_result(stats(&run.spec(mode, log), runs))?;
            print!("{}", report.table());
            for line in report.machine_lines() {
                println!("{line}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::RecordUntilExpected {
            max_tries,
            log,
            run,
        } => {
            let spec = run.spec(RrMode::Record, None);
            match harness_result(record_until_expected(&spec, max_tries, &log))? {
                Ok(c) => {
                    println!("recorded tries={} log={}", c.tries, c.log.display());
                    Ok(ExitCode::SUCCESS)
                }
                Err(failed) => {
                    println!("{failed}");
                    Ok(ExitCode::from(1))
                }
            }
        }
        Cmd::Dump { log } => {
            print!("{}", dump(&load(&log)?));
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Graph { dot, log } => {
            let text = export_dot(&build_graph(&load(&log)?));
            if dot.as_os_str() == "-" {
                let _ = std::io::stdout().write_all(text.as_bytes());
            } else {
                fs::write(&dot, text)
                    .map_err(|e| fail(format!("cannot write {}: {e}", dot.display())))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Cycles { log } => {
            let report = find_cycles(&build_graph(&load(&log)?));
            println!("{report}");
            Ok(ExitCode::from(if report.is_acyclic() { 0 } else { 1 }))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    run(cli).unwrap_or_else(|code| code)
}
