use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use lwrr::analysis::{build_graph, export_dot, CommGraph};
use lwrr::{DesyncPolicy, RecordLog, RrMode, DESYNC_EXIT_CODE};
use lwrr_cli::harness::{record_until_expected, run_once, stats, Outcome, RunSpec};

const LWRR: &str = env!("CARGO_BIN_EXE_lwrr");
const FIXTURES: &str = env!("CARGO_BIN_EXE_fixtures");

fn fixture(args: &[&str]) -> Vec<String> {
    std::iter::once(FIXTURES)
        .chain(args.iter().copied())
        .map(String::from)
        .collect()
}

fn record(dir: &Path, args: &[&str]) -> PathBuf {
    let log = dir.join(format!("{}.log", args.join("_")));
    let run = run_once(&RunSpec::new(fixture(args), RrMode::Record).with_log(&log)).unwrap();
    assert_eq!(run.outcome, Outcome::Expected, "{}", run.stderr);
    log
}

fn lwrr(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(LWRR).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn outcome_examples() {
    let outcome = |args: &[&str], limit_ms| {
        let spec = RunSpec {
            time_limit: Duration::from_millis(limit_ms),
            ..RunSpec::new(fixture(args), RrMode::Noop)
        };
        run_once(&spec).unwrap().outcome
    };
    assert_eq!(outcome(&["pass"], 10_000), Outcome::Expected);
    assert_eq!(outcome(&["fail"], 10_000), Outcome::Unexpected);
    assert_eq!(outcome(&["abort"], 10_000), Outcome::Crash);
    assert_eq!(outcome(&["hang"], 300), Outcome::Timeout);
}

#[test]
fn record_until_expected_limits() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("kept.log");
    let ok = record_until_expected(&RunSpec::new(fixture(&["pass"]), RrMode::Record), 100, &log)
        .unwrap()
        .unwrap();
    assert_eq!(ok.tries, 1);
    assert!(RecordLog::load(&log).is_ok());

    let failed = record_until_expected(&RunSpec::new(fixture(&["fail"]), RrMode::Record), 5, &log)
        .unwrap()
        .unwrap_err();
    assert_eq!(failed.outcomes, [Outcome::Unexpected; 5]);
    assert!(failed
        .to_string()
        .starts_with("no expected execution after 5 tries"));
}

#[test]
fn stats_of_one_deterministic_run() {
    let report = stats(&RunSpec::new(fixture(&["pass"]), RrMode::Record), 1).unwrap();
    assert_eq!(report.count(Outcome::Expected), 1);
    assert!(report.runs[0].log_bytes.is_some());
}

#[test]
fn error_out_policy_exits_with_desync_code() {
    let dir = tempfile::tempdir().unwrap();
    let log = record(dir.path(), &["external"]);
    let spec = RunSpec {
        desync_policy: Some(DesyncPolicy::ErrorOut),
        ..RunSpec::new(fixture(&["external"]), RrMode::Replay).with_log(&log)
    };
    let run = run_once(&spec).unwrap();
    assert_eq!(run.status, Some(DESYNC_EXIT_CODE), "{}", run.stderr);
    assert_eq!(run.stderr.matches("rr-desync: ").count(), 1);
}

#[test]
fn error_out_reports_end_of_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = record(dir.path(), &["pingpong", "2"]);
    let spec = RunSpec {
        desync_policy: Some(DesyncPolicy::ErrorOut),
        ..RunSpec::new(fixture(&["pingpong", "3"]), RrMode::Replay).with_log(&log)
    };
    let run = run_once(&spec).unwrap();
    assert_eq!(run.status, Some(DESYNC_EXIT_CODE));
    assert!(run.stderr.contains("rr-desync: EndOfLog"), "{}", run.stderr);
}

#[test]
fn dump_single_send() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("one.log");
    let rt = lwrr::Runtime::new(lwrr::Config::with_mode(RrMode::Record)).unwrap();
    rt.run_main(|| {
        let (tx, _rx) = lwrr::channel::<u64>();
        tx.send(1).unwrap();
    });
    rt.recorded_log().unwrap().save(&log).unwrap();
    let (code, out, _) = lwrr(&["dump", log.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(
        out,
        "# lwrr log v1: 1 records\n[] 0 Send LOCAL_UNBOUNDED u64 SendOk ch=([],1)\n"
    );

    let empty = dir.path().join("empty.log");
    RecordLog::new().save(&empty).unwrap();
    let (_, out, _) = lwrr(&["dump", empty.to_str().unwrap()]);
    assert_eq!(out.lines().count(), 1);
}

#[test]
fn dump_groups_by_thread_with_contiguous_clocks() {
    let dir = tempfile::tempdir().unwrap();
    let log = record(dir.path(), &["pipeline"]);
    let (_, out, _) = lwrr(&["dump", log.to_str().unwrap()]);
    let mut seen = Vec::<String>::new();
    let mut last: Option<(String, u64)> = None;
    for line in out.lines().skip(1) {
        let mut parts = line.split(' ');
        let thread = parts.next().unwrap().to_string();
        let id: u64 = parts.next().unwrap().parse().unwrap();
        match &last {
            Some((t, prev)) if *t == thread => assert_eq!(id, prev + 1),
            _ => {
                assert!(!seen.contains(&thread), "{thread} split");
                assert_eq!(id, 0);
                seen.push(thread.clone());
            }
        }
        last = Some((thread, id));
    }
    assert_eq!(seen, ["[]", "[1]", "[2]"]);
}

#[test]
fn cycles_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let pipeline = record(dir.path(), &["pipeline"]);
    let pingpong = record(dir.path(), &["pingpong", "5"]);
    let (code, out, _) = lwrr(&["cycles", pipeline.to_str().unwrap()]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("does not prove"));
    let (code, out, _) = lwrr(&["cycles", pingpong.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(out.contains("[] -> ([],1) -> [1] -> ([],2) -> []"), "{out}");

    let junk = dir.path().join("junk.log");
    std::fs::write(&junk, b"not a log").unwrap();
    assert_eq!(lwrr(&["cycles", junk.to_str().unwrap()]).0, 2);
    assert_eq!(lwrr(&["cycles", "/nonexistent.log"]).0, 2);
}

#[test]
fn sends_without_receives_leave_a_sink_channel() {
    let dir = tempfile::tempdir().unwrap();
    let log = (0..500)
        .map(|_| record(dir.path(), &["exitrace"]))
        .find(|l| RecordLog::load(l).unwrap().len() == 1)
        .expect("no long exitrace log in 500 runs");
    let g = build_graph(&RecordLog::load(&log).unwrap());
    let edges: Vec<String> = g.edges().map(|(a, b, n)| format!("{a}->{b}:{n}")).collect();
    assert_eq!(edges, ["[1]->([],1):1"]);
}

// A validator for the DOT subset: `digraph ID? { stmt* }` with node and
// edge statements and optional attribute lists.
#[derive(Debug, PartialEq, Clone)]
enum Tok {
    Id(String),
    Punct(&'static str),
}

fn lex(s: &str) -> Result<Vec<Tok>, String> {
    let mut out = Vec::new();
    let mut chars = s.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '{' | '}' | '[' | ']' | '=' | ',' | ';' => {
                chars.next();
                out.push(Tok::Punct(match c {
                    '{' => "{",
                    '}' => "}",
                    '[' => "[",
                    ']' => "]",
                    '=' => "=",
                    ',' => ",",
                    _ => ";",
                }));
            }
            '-' => {
                chars.next();
                if chars.next() != Some('>') {
                    return Err("bad edge operator".into());
                }
                out.push(Tok::Punct("->"));
            }
            '"' => {
                chars.next();
                let mut id = String::new();
                loop {
                    match chars.next() {
                        Some('"') => break,
                        Some('\\') => id.push(chars.next().ok_or("dangling escape")?),
                        Some(c) => id.push(c),
                        None => return Err("unterminated string".into()),
                    }
                }
                out.push(Tok::Id(id));
            }
            c if c.is_alphanumeric() || c == '_' => {
                let mut id = String::new();
                while let Some(&c) = chars.peek() {
                    if !(c.is_alphanumeric() || c == '_' || c == '.') {
                        break;
                    }
                    id.push(c);
                    chars.next();
                }
                out.push(Tok::Id(id));
            }
            c => return Err(format!("unexpected {c:?}")),
        }
    }
    Ok(out)
}

type Parsed = (BTreeSet<String>, BTreeSet<(String, String, String)>);

fn parse_dot(s: &str) -> Result<Parsed, String> {
    let toks = lex(s)?;
    let mut i = 0;
    let id = |i: &mut usize| match toks.get(*i) {
        Some(Tok::Id(s)) => {
            *i += 1;
            Ok(s.clone())
        }
        t => Err(format!("expected id, got {t:?}")),
    };
    let punct = |i: &mut usize, p: &str| match toks.get(*i) {
        Some(Tok::Punct(q)) if *q == p => {
            *i += 1;
            true
        }
        _ => false,
    };
    if id(&mut i)? != "digraph" {
        return Err("not a digraph".into());
    }
    if matches!(toks.get(i), Some(Tok::Id(_))) {
        i += 1;
    }
    if !punct(&mut i, "{") {
        return Err("missing {".into());
    }
    let (mut nodes, mut edges) = (BTreeSet::new(), BTreeSet::new());
    loop {
        if punct(&mut i, "}") {
            break;
        }
        if punct(&mut i, ";") {
            continue;
        }
        let a = id(&mut i)?;
        let b = if punct(&mut i, "->") {
            Some(id(&mut i)?)
        } else {
            None
        };
        let mut label = String::new();
        if punct(&mut i, "[") {
            while !punct(&mut i, "]") {
                let k = id(&mut i)?;
                if !punct(&mut i, "=") {
                    return Err("missing =".into());
                }
                let v = id(&mut i)?;
                if k == "label" {
                    label = v;
                }
                let _ = punct(&mut i, ",") || punct(&mut i, ";");
            }
        }
        match b {
            Some(b) => {
                edges.insert((a, b, label));
            }
            None => {
                nodes.insert(a);
            }
        }
    }
    if i != toks.len() {
        return Err("trailing tokens".into());
    }
    Ok((nodes, edges))
}

fn node_key(n: &lwrr::analysis::CommNode) -> String {
    match n {
        lwrr::analysis::CommNode::Thread(t) => format!("t:{t}"),
        lwrr::analysis::CommNode::Channel(c) => format!("c:{c}"),
    }
}

fn check_round_trip(g: &CommGraph) {
    let dot = export_dot(g);
    let (nodes, edges) = parse_dot(&dot).unwrap_or_else(|e| panic!("{e}\n{dot}"));
    assert_eq!(nodes, g.nodes().map(node_key).collect::<BTreeSet<_>>());
    let want: BTreeSet<_> = g
        .edges()
        .map(|(a, b, n)| (node_key(a), node_key(b), n.to_string()))
        .collect();
    assert_eq!(edges, want);
    for (a, b, _) in &edges {
        assert!(nodes.contains(a) && nodes.contains(b));
    }
}

#[test]
fn dot_output_passes_the_validator() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(parse_dot("digraph comm {}\n").unwrap().0.len(), 0);
    check_round_trip(&CommGraph::new());
    for args in [
        &["pingpong", "4"][..],
        &["pipeline"],
        &["unmanaged"],
        &["multirace"],
        &["spawntree"],
    ] {
        let log = record(dir.path(), args);
        let g = build_graph(&RecordLog::load(&log).unwrap());
        check_round_trip(&g);

        let out = dir.path().join("g.dot");
        let (code, _, _) = lwrr(&[
            "graph",
            "--dot",
            out.to_str().unwrap(),
            log.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let first = std::fs::read(&out).unwrap();
        lwrr(&[
            "graph",
            "--dot",
            out.to_str().unwrap(),
            log.to_str().unwrap(),
        ]);
        assert_eq!(std::fs::read(&out).unwrap(), first);
        assert_eq!(first, export_dot(&g).into_bytes());
    }
}

#[test]
fn validator_rejects_garbage() {
    assert!(parse_dot("graph {}").is_err());
    assert!(parse_dot("digraph { a -> }").is_err());
    assert!(parse_dot("digraph { \"a\" [label=] }").is_err());
    assert!(parse_dot("digraph { a } }").is_err());
}

#[test]
fn cli_replay_passthrough() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("race.log");
    let (code, out, _) = lwrr(&[
        "record-until-expected",
        "--log",
        log.to_str().unwrap(),
        FIXTURES,
        "race2",
    ]);
    assert_eq!(code, 0);
    assert!(out.starts_with("recorded tries="));
    let (code, out, err) = lwrr(&["replay", "--log", log.to_str().unwrap(), FIXTURES, "race2"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("order=[1],[2]"));
    assert!(err.contains("outcome=EXPECTED"));

    let (code, _, err) = lwrr(&["stats", "--mode", "replay", FIXTURES, "race2"]);
    assert_eq!(code, 2);
    assert!(err.contains("--log"));
}
