//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use lwrr::analysis::{build_graph, find_cycles, CommGraph, CommNode};
use lwrr::{
    ChannelFlavor, DetChannelId, DetThreadId, EventStatus, EventType, LogEntry, RecordLog, RrMode,
};
use lwrr_cli::harness::{record_until_expected, run_once, stats, Outcome, RunRecord, RunSpec};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::Rng;

const LWRR: &str = env!("CARGO_BIN_EXE_lwrr");
const FIXTURES: &str = env!("CARGO_BIN_EXE_fixtures");
const WATCHDOG: Duration = Duration::from_secs(10);

type Verdict = Result<String, String>;
type Check<'a> = Box<dyn FnOnce() -> Verdict + 'a>;

fn fixture(args: &[&str]) -> Vec<String> {
    std::iter::once(FIXTURES)
        .chain(args.iter().copied())
        .map(String::from)
        .collect()
}

fn spec(args: &[&str], mode: RrMode) -> RunSpec {
    RunSpec {
        time_limit: WATCHDOG,
        ..RunSpec::new(fixture(args), mode)
    }
}

fn replay_spec(args: &[&str], log: &Path) -> RunSpec {
    spec(args, RrMode::Replay).with_log(log)
}

fn record_once(dir: &Path, args: &[&str], name: &str) -> Result<(PathBuf, RunRecord), String> {
    let log = dir.join(name);
    let run = run_once(&spec(args, RrMode::Record).with_log(&log)).map_err(|e| e.to_string())?;
    Ok((log, run))
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_determinism(dir: &Path) -> Verdict {
    let start = Instant::now();
    let mut details = Vec::new();
    for name in ["race2", "selrace"] {
        let log = dir.join(format!("{name}.log"));
        let captured = record_until_expected(&spec(&[name], RrMode::Record), 100, &log)
            .map_err(|e| e.to_string())?
            .map_err(|f| f.to_string())?;
        let replay = stats(&replay_spec(&[name], &log), 100).map_err(|e| e.to_string())?;
        let noop = stats(&spec(&[name], RrMode::Noop), 100).map_err(|e| e.to_string())?;
        let (r, n) = (
            replay.count(Outcome::Expected),
            noop.count(Outcome::Expected),
        );
        details.push(format!(
            "{name}: tries={} replay={r}/100 noop={n}/100",
            captured.tries
        ));
        ensure(r == 100 && n > 1 && n < 99, || details.join("; "))?;
    }
    let took = start.elapsed();
    details.push(format!("{:.1}s", took.as_secs_f64()));
    ensure(took < Duration::from_secs(180), || details.join("; "))?;
    Ok(details.join("; "))
}

fn deliveries(stdout: &str) -> Vec<&str> {
    stdout
        .lines()
        .filter(|l| l.starts_with("recv ") || l.starts_with("select "))
        .collect()
}

fn c2_trace_equality(dir: &Path) -> Verdict {
    let mut details = Vec::new();
    for name in ["race2", "selrace", "multirace"] {
        let (log, recorded) = record_once(dir, &[name], &format!("{name}-trace.log"))?;
        let want = deliveries(&recorded.stdout);
        ensure(!want.is_empty(), || {
            format!("{name}: no deliveries printed")
        })?;
        let mut equal = 0;
        for _ in 0..100 {
            let run = run_once(&replay_spec(&[name], &log)).map_err(|e| e.to_string())?;
            if deliveries(&run.stdout) == want && !run.stderr.contains("rr-desync:") {
                equal += 1;
            }
        }
        details.push(format!("{name}: {equal}/100 ({} deliveries)", want.len()));
        ensure(equal == 100, || details.join("; "))?;
    }
    Ok(details.join("; "))
}

fn c3_desync_robustness(dir: &Path) -> Verdict {
    let (log, recorded) = record_once(dir, &["external"], "external.log")?;
    ensure(recorded.outcome == Outcome::Expected, || {
        "recording failed".into()
    })?;
    let mut good = 0;
    let mut slowest = Duration::ZERO;
    let mut bad = Vec::new();
    for i in 0..100 {
        let run = run_once(&replay_spec(&["external"], &log)).map_err(|e| e.to_string())?;
        slowest = slowest.max(run.wall);
        let warnings = run.stderr.matches("rr-desync:").count();
        if run.outcome == Outcome::Expected && warnings == 1 && run.stdout.trim() == "sum=1872" {
            good += 1;
        } else if bad.len() < 3 {
            bad.push(format!(
                "run {i}: {} warnings={warnings} {:?}",
                run.outcome, run.stdout
            ));
        }
    }
    let detail = format!(
        "{good}/100 desynced once with correct output; slowest {:.0} ms {}",
        slowest.as_secs_f64() * 1000.0,
        bad.join(" ")
    );
    ensure(good == 100, || detail.clone())?;
    Ok(detail)
}

fn c4_exit_race(dir: &Path) -> Verdict {
    let mut logs: BTreeMap<usize, PathBuf> = BTreeMap::new();
    for i in 0..1000 {
        let (log, run) = record_once(dir, &["exitrace"], &format!("exitrace-{i}.log"))?;
        ensure(run.outcome == Outcome::Expected, || {
            format!("record {}", run.outcome)
        })?;
        let len = RecordLog::load(&log).map_err(|e| e.to_string())?.len();
        logs.entry(len).or_insert(log);
        if logs.len() == 2 {
            break;
        }
    }
    ensure(logs.keys().eq([0, 1].iter()), || {
        format!("saw log lengths {:?} only", logs.keys().collect::<Vec<_>>())
    })?;
    let mut details = Vec::new();
    for (len, log) in &logs {
        let mut clean = 0;
        for _ in 0..100 {
            let run = run_once(&replay_spec(&["exitrace"], log)).map_err(|e| e.to_string())?;
            if run.outcome == Outcome::Expected && !run.stderr.contains("rr-desync:") {
                clean += 1;
            }
        }
        details.push(format!("{len}-record log: {clean}/100"));
        ensure(clean == 100, || details.join("; "))?;
    }
    Ok(details.join("; "))
}

fn c5_log_size(dir: &Path) -> Verdict {
    let (small, r1) = record_once(dir, &["bulk", "10000", "8"], "bulk-8.log")?;
    let (large, r2) = record_once(dir, &["bulk", "10000", "8192"], "bulk-8k.log")?;
    ensure(
        r1.outcome == Outcome::Expected && r2.outcome == Outcome::Expected,
        || "bulk fixture failed".into(),
    )?;
    let a = std::fs::read(small).map_err(|e| e.to_string())?;
    let b = std::fs::read(large).map_err(|e| e.to_string())?;
    let detail = format!(
        "8 B payloads: {} bytes, 8 KB payloads: {} bytes (limit 1048576; reference median 78.5 KB)",
        a.len(),
        b.len()
    );
    ensure(a == b && a.len() < 1 << 20, || detail.clone())?;
    Ok(detail)
}

fn dti_strategy() -> impl Strategy<Value = DetThreadId> {
    prop_oneof![
        1 => Just(DetThreadId::Unmanaged),
        6 => prop::collection::vec(any::<u32>(), 0..6).prop_map(|p| DetThreadId::from_path(&p)),
    ]
}

fn entry_strategy() -> impl Strategy<Value = LogEntry> {
    let status = (0u8..6, dti_strategy(), any::<u32>()).prop_map(|(k, dti, index)| match k {
        0 => EventStatus::SendOk,
        1 => EventStatus::Success(dti),
        2 => EventStatus::Empty,
        3 => EventStatus::Timeout,
        4 => EventStatus::RecvError,
        _ => EventStatus::SelectedIndex { index, sender: dti },
    });
    (
        dti_strategy(),
        any::<u64>(),
        prop::sample::select(EventType::ALL.to_vec()),
        prop::sample::select(ChannelFlavor::ALL.to_vec()),
        "\\PC{0,24}",
        status,
        prop::collection::vec((dti_strategy(), any::<u64>()), 0..5),
    )
        .prop_map(
            |(thread, event_id, event_type, flavor, data_type, status, chans)| LogEntry {
                thread,
                event_id,
                event_type,
                flavor,
                data_type,
                status,
                channels: chans
                    .into_iter()
                    .map(|(d, s)| DetChannelId::new(d, s))
                    .collect(),
            },
        )
}

fn c6_round_trip() -> Verdict {
    let mut runner = TestRunner::new(PropConfig {
        cases: 1000,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let strategy = prop::collection::vec(entry_strategy(), 0..40)
        .prop_map(|es| es.into_iter().collect::<RecordLog>());
    let records = std::cell::Cell::new(0usize);
    runner
        .run(&strategy, |log| {
            records.set(records.get() + log.len());
            let bytes = log.to_bytes().expect("serialize");
            let back = RecordLog::from_bytes(&bytes).expect("deserialize");
            prop_assert_eq!(&back, &log);
            prop_assert_eq!(back.to_bytes().expect("serialize"), bytes);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!(
        "1000 random logs, {} records, identity held",
        records.get()
    ))
}

fn c7_id_determinism() -> Verdict {
    let mut sets = BTreeSet::new();
    for _ in 0..100 {
        let run = run_once(&spec(&["spawntree"], RrMode::Noop)).map_err(|e| e.to_string())?;
        ensure(run.outcome == Outcome::Expected, || {
            format!("spawntree {}", run.outcome)
        })?;
        let mut dtis = Vec::new();
        for line in run.stdout.lines() {
            let (dti, chans) = line
                .strip_prefix("dti=")
                .and_then(|l| l.split_once(" channels="))
                .ok_or_else(|| format!("bad line {line:?}"))?;
            let dti: DetThreadId = dti.parse().map_err(|e| format!("{e}"))?;
            let seqs: Vec<u64> = chans
                .split("),(")
                .map(|c| {
                    let c = c.trim_start_matches('(').trim_end_matches(')');
                    let c = format!("({c})");
                    c.parse::<DetChannelId>()
                        .map_err(|e| format!("{e}"))
                        .and_then(|id| {
                            ensure(id.creator == dti, || format!("{id} not created by {dti}"))?;
                            Ok(id.seq)
                        })
                })
                .collect::<Result<_, _>>()?;
            let want: Vec<u64> = (1..=seqs.len() as u64).collect();
            ensure(seqs == want, || format!("{dti}: seqs {seqs:?}"))?;
            dtis.push(dti);
        }
        let unique: BTreeSet<_> = dtis.iter().cloned().collect();
        ensure(unique.len() == dtis.len(), || "duplicate DTI".into())?;
        sets.insert(unique);
    }
    ensure(sets.len() == 1, || {
        format!("{} distinct DTI sets", sets.len())
    })?;
    let n = sets.iter().next().map_or(0, BTreeSet::len);
    Ok(format!(
        "100 runs, one DTI set of {n} unique threads, DCI seqs contiguous"
    ))
}

fn c8_overhead() -> Verdict {
    // 50000 round trips = 100000 messages.
    let args = ["pingpong", "50000"];
    let runs = 3;
    let time = |mode| -> Result<f64, String> {
        let s = RunSpec {
            time_limit: Duration::from_secs(300),
            ..RunSpec::new(fixture(&args), mode)
        };
        let report = stats(&s, runs).map_err(|e| e.to_string())?;
        ensure(report.count(Outcome::Expected) == runs, || {
            format!("{mode} runs not all expected")
        })?;
        Ok(report.mean_ms())
    };
    let noop = time(RrMode::Noop)?;
    let record = time(RrMode::Record)?;
    let ratio = record / noop;
    let flag = if ratio < 3.0 {
        ""
    } else {
        " WARNING: above 3x"
    };
    Ok(format!(
        "100k-message pingpong, mean of {runs}: noop {noop:.1} ms, record {record:.1} ms, ratio {ratio:.2}x{flag}"
    ))
}

/// Every simple cycle, found by walking all simple paths from every node
/// and rotating each closed path to start at its smallest node.
fn oracle_cycles(g: &CommGraph) -> BTreeSet<Vec<CommNode>> {
    fn walk(g: &CommGraph, path: &mut Vec<CommNode>, out: &mut BTreeSet<Vec<CommNode>>) {
        let last = path.last().unwrap().clone();
        let succs: Vec<CommNode> = g.successors(&last).cloned().collect();
        for next in succs {
            if next == path[0] {
                let min = (0..path.len()).min_by_key(|&i| &path[i]).unwrap();
                let mut c = path[min..].to_vec();
                c.extend_from_slice(&path[..min]);
                out.insert(c);
            } else if !path.contains(&next) {
                path.push(next);
                walk(g, path, out);
                path.pop();
            }
        }
    }
    let mut out = BTreeSet::new();
    for n in g.nodes() {
        walk(g, &mut vec![n.clone()], &mut out);
    }
    out
}

fn random_bipartite(rng: &mut impl Rng) -> CommGraph {
    let total = rng.random_range(1..=12usize);
    let threads = rng.random_range(0..=total);
    let p: f64 = rng.random_range(0.05..0.5);
    let mut g = CommGraph::new();
    let ts: Vec<CommNode> = (0..threads)
        .map(|i| CommNode::Thread(DetThreadId::from_path(&[i as u32 + 1])))
        .collect();
    let cs: Vec<CommNode> = (0..total - threads)
        .map(|i| CommNode::Channel(DetChannelId::new(DetThreadId::main(), i as u64 + 1)))
        .collect();
    for n in ts.iter().chain(&cs) {
        g.add_node(n.clone());
    }
    for t in &ts {
        for c in &cs {
            if rng.random_bool(p) {
                g.add_edge(t.clone(), c.clone(), rng.random_range(1..4));
            }
            if rng.random_bool(p) {
                g.add_edge(c.clone(), t.clone(), rng.random_range(1..4));
            }
        }
    }
    g
}

fn c9_cycles(dir: &Path) -> Verdict {
    let mut rng = rand::rng();
    let cases = 600;
    let mut total_cycles = 0;
    for i in 0..cases {
        let g = random_bipartite(&mut rng);
        let found = find_cycles(&g).cycles;
        let as_set: BTreeSet<_> = found.iter().cloned().collect();
        ensure(as_set.len() == found.len(), || {
            format!("case {i}: duplicate cycle")
        })?;
        let oracle = oracle_cycles(&g);
        ensure(as_set == oracle, || {
            format!(
                "case {i}: {} cycles vs oracle {}",
                found.len(),
                oracle.len()
            )
        })?;
        total_cycles += oracle.len();
    }

    let mut codes = Vec::new();
    for (args, want) in [(&["pipeline"][..], 0), (&["pingpong", "10"], 1)] {
        let (log, _) = record_once(dir, args, &format!("{}-cyc.log", args[0]))?;
        let graph_cycles = find_cycles(&build_graph(
            &RecordLog::load(&log).map_err(|e| e.to_string())?,
        ))
        .cycles;
        let code = std::process::Command::new(LWRR)
            .arg("cycles")
            .arg(&log)
            .output()
            .map_err(|e| e.to_string())?
            .status
            .code();
        ensure(code == Some(want), || format!("{}: exit {code:?}", args[0]))?;
        if args[0] == "pingpong" {
            ensure(
                graph_cycles.len() == 1 && graph_cycles[0].len() == 4,
                || format!("pingpong cycles {graph_cycles:?}"),
            )?;
        }
        codes.push(format!("{}={}", args[0], want));
    }
    Ok(format!(
        "{cases} random bipartite graphs (<=12 nodes, {total_cycles} cycles) agree with oracle; exit codes {}",
        codes.join(" ")
    ))
}

fn c10_timeout(dir: &Path) -> Verdict {
    let (log, recorded) = record_once(dir, &["timeout", "5000"], "timeout.log")?;
    ensure(recorded.outcome == Outcome::Expected, || {
        "record failed".into()
    })?;
    let entry = RecordLog::load(&log)
        .map_err(|e| e.to_string())?
        .get(&DetThreadId::main(), 0)
        .cloned()
        .ok_or("no logged receive")?;
    ensure(entry.status == EventStatus::Timeout, || {
        format!("logged {}", entry.status)
    })?;
    let run = run_once(&replay_spec(&["timeout", "5000"], &log)).map_err(|e| e.to_string())?;
    let elapsed: u64 = run
        .stdout
        .lines()
        .find_map(|l| l.strip_prefix("elapsed_ms="))
        .and_then(|v| v.parse().ok())
        .ok_or("no elapsed_ms line")?;
    let detail = format!(
        "recorded wait {:.0} ms; replayed receive {elapsed} ms (process {:.0} ms)",
        recorded.wall_ms(),
        run.wall_ms()
    );
    ensure(run.outcome == Outcome::Expected && elapsed < 100, || {
        detail.clone()
    })?;
    Ok(detail)
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("scratch dir");
    let d = dir.path();
    let criteria: Vec<(&str, Check<'_>)> = vec![
        ("determinism under replay", Box::new(|| c1_determinism(d))),
        ("replay trace equality", Box::new(|| c2_trace_equality(d))),
        ("desync robustness", Box::new(|| c3_desync_robustness(d))),
        ("exit-race liveness", Box::new(|| c4_exit_race(d))),
        ("log size", Box::new(|| c5_log_size(d))),
        ("round-trip", Box::new(c6_round_trip)),
        ("id determinism", Box::new(c7_id_determinism)),
        ("record overhead", Box::new(c8_overhead)),
        ("cycle detection", Box::new(|| c9_cycles(d))),
        ("timeout forcing", Box::new(|| c10_timeout(d))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("[PASS] {} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
