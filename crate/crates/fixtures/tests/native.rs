use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use lwrr::{Config, RrMode, Runtime};
use lwrr_fixtures::{catalog, find, FixtureOutput, NondeterminismClass};

fn run(name: &str, mode: RrMode, args: &[&str]) -> (FixtureOutput, std::sync::Arc<Runtime>) {
    let fixture = find(name).unwrap();
    let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    let rt = Runtime::new(Config::with_mode(mode)).unwrap();
    let out = rt.run_main(|| (fixture.run)(&args));
    (out, rt)
}

fn expected_rate(name: &str, runs: usize) -> f64 {
    let want = find(name).unwrap().expected_status;
    let hits = (0..runs)
        .filter(|_| run(name, RrMode::Noop, &[]).0.status == want)
        .count();
    hits as f64 / runs as f64
}

#[test]
fn flake_fixtures_flake_within_documented_bounds() {
    for name in ["race2", "selrace"] {
        let (lo, hi) = find(name).unwrap().native_expected_rate;
        let rate = expected_rate(name, 1000);
        assert!(rate >= lo && rate <= hi, "{name}: {rate}");
    }
}

#[test]
fn exitrace_produces_both_log_lengths() {
    let mut seen = BTreeSet::new();
    for _ in 0..300 {
        let (out, rt) = run("exitrace", RrMode::Record, &[]);
        assert_eq!(out.status, 0);
        seen.insert(rt.recorded_log().unwrap().len());
        if seen.len() == 2 {
            break;
        }
    }
    assert_eq!(seen, BTreeSet::from([0, 1]));
}

#[test]
fn quick_fixtures_finish_within_a_second() {
    for f in catalog() {
        if matches!(f.name, "timeout" | "hang" | "abort") {
            continue;
        }
        let start = Instant::now();
        let (out, _) = run(f.name, RrMode::Noop, &[]);
        assert!(start.elapsed() < Duration::from_secs(1), "{}", f.name);
        if f.native_expected_rate == (1.0, 1.0) {
            assert_eq!(out.status, f.expected_status, "{}", f.name);
        }
    }
}

#[test]
fn timeout_waits_natively() {
    let (out, _) = run("timeout", RrMode::Noop, &["50"]);
    assert_eq!(out.status, 0);
    let ms: u64 = out.lines[1]
        .strip_prefix("elapsed_ms=")
        .unwrap()
        .parse()
        .unwrap();
    assert!(ms >= 50);
}

#[test]
fn external_sums_every_message() {
    for _ in 0..20 {
        assert_eq!(run("external", RrMode::Noop, &[]).0.lines, ["sum=1872"]);
    }
}

#[test]
fn spawntree_ids() {
    let (out, _) = run("spawntree", RrMode::Noop, &[]);
    assert_eq!(
        out.lines,
        [
            "dti=[1,1,1] channels=([1,1,1],1),([1,1,1],2),([1,1,1],3)",
            "dti=[1,1,2] channels=([1,1,2],1),([1,1,2],2),([1,1,2],3)",
            "dti=[1,1] channels=([1,1],1),([1,1],2)",
            "dti=[1,2,1] channels=([1,2,1],1),([1,2,1],2),([1,2,1],3)",
            "dti=[1,2,2] channels=([1,2,2],1),([1,2,2],2),([1,2,2],3)",
            "dti=[1,2] channels=([1,2],1),([1,2],2)",
            "dti=[1] channels=([1],1)",
        ]
    );
}

#[test]
fn unmanaged_reports_none() {
    let (out, _) = run("unmanaged", RrMode::Noop, &[]);
    assert_eq!(
        out.lines,
        ["raw channel=(NONE,1) from=NONE", "raw dti=NONE from=NONE"]
    );
}

#[test]
fn classes_are_documented() {
    let class = |n| find(n).unwrap().class;
    assert_eq!(class("race2"), NondeterminismClass::ArrivalOrder);
    assert_eq!(class("selrace"), NondeterminismClass::SelectReadiness);
    assert_eq!(class("exitrace"), NondeterminismClass::ExitRace);
    assert_eq!(class("external"), NondeterminismClass::External);
    assert_eq!(class("unmanaged"), NondeterminismClass::UnmanagedThread);
    let names: BTreeSet<_> = catalog().iter().map(|f| f.name).collect();
    assert_eq!(names.len(), catalog().len());
}

#[test]
fn class_none_fixtures_replay_without_desync() {
    for name in [
        "spawntree",
        "pingpong",
        "pipeline",
        "bulk",
        "multirace",
        "race2",
        "selrace",
    ] {
        let (recorded, rec) = run(name, RrMode::Record, &[]);
        let fixture = find(name).unwrap();
        let rt = Runtime::replaying(Config::default(), rec.recorded_log().unwrap());
        let replayed = rt.run_main(|| (fixture.run)(&[]));
        assert_eq!(replayed, recorded, "{name}");
        assert!(!rt.is_desynced(), "{name}: {:?}", rt.desync_report());
    }
}
