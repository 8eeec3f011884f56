//! Small concurrent programs with controlled nondeterminism.
//!
//! Each fixture runs on the calling thread, which must be the main thread of
//! an `lwrr` runtime (see [`lwrr::run_main`]). Flakiness comes from random
//! start jitter of up to 5 ms, so the flake rates do not depend much on the
//! scheduler.
//!
//! Fixtures that deliver messages print one `recv ...` line per delivery.
//! Comparing those lines across runs compares delivery sequences.

use std::fmt;
use std::thread;
use std::time::{Duration, Instant};

use lwrr::{channel, spawn, Receiver, Select, Sender};
use rand::Rng;

/// Where a fixture's nondeterminism comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NondeterminismClass {
    None,
    ArrivalOrder,
    SelectReadiness,
    ExitRace,
    External,
    UnmanagedThread,
}

impl fmt::Display for NondeterminismClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NondeterminismClass::None => "NONE",
            NondeterminismClass::ArrivalOrder => "ARRIVAL_ORDER",
            NondeterminismClass::SelectReadiness => "SELECT_READINESS",
            NondeterminismClass::ExitRace => "EXIT_RACE",
            NondeterminismClass::External => "EXTERNAL",
            NondeterminismClass::UnmanagedThread => "UNMANAGED_THREAD",
        })
    }
}

/// Exit status and stdout lines of one fixture run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureOutput {
    pub status: i32,
    pub lines: Vec<String>,
}

impl FixtureOutput {
    fn ok(lines: Vec<String>) -> Self {
        FixtureOutput { status: 0, lines }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Fixture {
    pub name: &'static str,
    pub class: NondeterminismClass,
    pub expected_status: i32,
    /// Documented bounds on the fraction of native runs that exit with
    /// `expected_status`.
    pub native_expected_rate: (f64, f64),
    pub description: &'static str,
    pub run: fn(&[String]) -> FixtureOutput,
}

const ALWAYS: (f64, f64) = (1.0, 1.0);

pub fn catalog() -> &'static [Fixture] {
    use NondeterminismClass as C;
    &[
        Fixture {
            name: "race2",
            class: C::ArrivalOrder,
            expected_status: 0,
            native_expected_rate: (0.2, 0.8),
            description: "two producers race into one receiver; expects [1] before [2]",
            run: race2,
        },
        Fixture {
            name: "selrace",
            class: C::SelectReadiness,
            expected_status: 0,
            native_expected_rate: (0.2, 0.8),
            description: "two channels race into a select; expects index 0 first",
            run: selrace,
        },
        Fixture {
            name: "exitrace",
            class: C::ExitRace,
            expected_status: 0,
            native_expected_rate: ALWAYS,
            description: "a worker's send races the main thread's exit; logs hold 0 or 1 records",
            run: exitrace,
        },
        Fixture {
            name: "external",
            class: C::External,
            expected_status: 0,
            native_expected_rate: ALWAYS,
            description: "random bits pick recv or recv_timeout for each receive",
            run: external,
        },
        Fixture {
            name: "unmanaged",
            class: C::UnmanagedThread,
            expected_status: 0,
            native_expected_rate: ALWAYS,
            description: "a raw std thread creates a channel and sends on it",
            run: unmanaged,
        },
        Fixture {
            name: "spawntree",
            class: C::None,
            expected_status: 0,
            native_expected_rate: ALWAYS,
            description: "a three-level spawn tree; every thread reports its ids",
            run: spawntree,
        },
        Fixture {
            name: "pingpong",
            class: C::None,
            expected_status: 0,
            native_expected_rate: ALWAYS,
            description: "[pingpong ROUNDS] main and [1] bounce a counter over two channels",
            run: pingpong,
        },
        Fixture {
            name: "pipeline",
            class: C::None,
            expected_status: 0,
            native_expected_rate: ALWAYS,
            description: "[1] feeds [2] which feeds main; the graph is acyclic",
            run: pipeline,
        },
        Fixture {
            name: "bulk",
            class: C::None,
            expected_status: 0,
            native_expected_rate: ALWAYS,
            description: "[bulk COUNT BYTES] [1] sends COUNT byte vectors of BYTES each",
            run: bulk,
        },
        Fixture {
            name: "timeout",
            class: C::None,
            expected_status: 0,
            native_expected_rate: ALWAYS,
            description: "[timeout MS] a receive that times out after MS (default 5000)",
            run: timeout,
        },
        Fixture {
            name: "multirace",
            class: C::ArrivalOrder,
            expected_status: 0,
            native_expected_rate: ALWAYS,
            description: "three producers into one receiver, then two into a select",
            run: multirace,
        },
        Fixture {
            name: "pass",
            class: C::None,
            expected_status: 0,
            native_expected_rate: ALWAYS,
            description: "exits 0",
            run: pass,
        },
        Fixture {
            name: "fail",
            class: C::None,
            expected_status: 0,
            native_expected_rate: (0.0, 0.0),
            description: "exits 1",
            run: fail,
        },
        Fixture {
            name: "abort",
            class: C::None,
            expected_status: 0,
            native_expected_rate: (0.0, 0.0),
            description: "aborts the process",
            run: abort,
        },
        Fixture {
            name: "hang",
            class: C::None,
            expected_status: 0,
            native_expected_rate: (0.0, 0.0),
            description: "sleeps forever",
            run: hang,
        },
    ]
}

pub fn find(name: &str) -> Option<&'static Fixture> {
    catalog().iter().find(|f| f.name == name)
}

fn jitter() {
    let us = rand::rng().random_range(0..=5000);
    thread::sleep(Duration::from_micros(us));
}

fn arg<T: std::str::FromStr>(args: &[String], i: usize, default: T) -> T {
    args.get(i).and_then(|a| a.parse().ok()).unwrap_or(default)
}

fn recv_line<T: fmt::Display>(rx: &Receiver<T>) -> (String, String) {
    let env = rx.recv_envelope().expect("sender hung up");
    let line = format!(
        "recv ch={} from={} payload={}",
        rx.id(),
        env.sender,
        env.payload
    );
    (env.sender.to_string(), line)
}

fn producer<T: Send + 'static>(tx: Sender<T>, items: Vec<T>) -> lwrr::JoinHandle<()> {
    spawn(move || {
        for item in items {
            jitter();
            tx.send(item).expect("receiver hung up");
        }
    })
    .expect("spawn failed")
}

fn race2(_: &[String]) -> FixtureOutput {
    let (tx, rx) = channel::<u32>();
    let a = producer(tx.clone(), vec![1]);
    let b = producer(tx, vec![2]);
    let (first, l1) = recv_line(&rx);
    let (second, l2) = recv_line(&rx);
    a.join().unwrap();
    b.join().unwrap();
    let expected = first == "[1]" && second == "[2]";
    FixtureOutput {
        status: if expected { 0 } else { 1 },
        lines: vec![l1, l2, format!("order={first},{second}")],
    }
}

fn selrace(_: &[String]) -> FixtureOutput {
    let (ta, ra) = channel::<u32>();
    let (tb, rb) = channel::<u32>();
    let a = producer(ta, vec![10]);
    let b = producer(tb, vec![20]);
    let mut sel = Select::new();
    sel.add(&ra);
    sel.add(&rb);
    let mut lines = Vec::new();
    let mut indices = Vec::new();
    for _ in 0..2 {
        let (i, env) = sel.select_envelope().expect("select failed");
        lines.push(format!(
            "select index={i} from={} payload={}",
            env.sender, env.payload
        ));
        indices.push(i);
    }
    a.join().unwrap();
    b.join().unwrap();
    FixtureOutput {
        status: if indices == [0, 1] { 0 } else { 1 },
        lines,
    }
}

fn exitrace(_: &[String]) -> FixtureOutput {
    let (tx, rx) = channel::<u32>();
    spawn(move || {
        jitter();
        let _ = tx.send(1);
    })
    .expect("spawn failed");
    jitter();
    // Keep the receiver alive past the return so the send never fails.
    std::mem::forget(rx);
    FixtureOutput::ok(vec!["main done".into()])
}

fn external(_: &[String]) -> FixtureOutput {
    let (tx, rx) = channel::<u32>();
    let a = producer(tx.clone(), (1..=16).collect());
    let b = producer(tx, (101..=116).collect());
    let bits: u32 = rand::rng().random();
    let mut sum = 0;
    for i in 0..32 {
        sum += if bits >> i & 1 == 1 {
            rx.recv().expect("sender hung up")
        } else {
            rx.recv_timeout(Duration::from_secs(5)).expect("no message")
        };
    }
    a.join().unwrap();
    b.join().unwrap();
    FixtureOutput {
        status: if sum == 1872 { 0 } else { 1 },
        lines: vec![format!("sum={sum}")],
    }
}

fn unmanaged(_: &[String]) -> FixtureOutput {
    let (report_tx, report_rx) = channel::<String>();
    let raw = thread::spawn(move || {
        let (tx, rx) = channel::<u32>();
        report_tx.send(format!("raw channel={}", tx.id())).unwrap();
        tx.send(5).unwrap();
        rx.recv().unwrap();
        report_tx
            .send(format!("raw dti={}", lwrr::current_dti()))
            .unwrap();
    });
    let mut lines = Vec::new();
    for _ in 0..2 {
        let env = report_rx.recv_envelope().unwrap();
        lines.push(format!("{} from={}", env.payload, env.sender));
    }
    raw.join().unwrap();
    FixtureOutput::ok(lines)
}

fn spawntree(_: &[String]) -> FixtureOutput {
    fn node(depth: usize, report: Sender<String>) {
        jitter();
        let me = lwrr::current_dti();
        let ids: Vec<String> = (0..=depth)
            .map(|_| channel::<()>().0.id().to_string())
            .collect();
        report
            .send(format!("dti={me} channels={}", ids.join(",")))
            .unwrap();
        if depth < 2 {
            let kids: Vec<_> = (0..2)
                .map(|_| {
                    let report = report.clone();
                    spawn(move || node(depth + 1, report)).expect("spawn failed")
                })
                .collect();
            for k in kids {
                k.join().unwrap();
            }
        }
    }
    // The report channel is ([],1); the tree starts with [1].
    let (report, rx) = channel::<String>();
    let root = spawn(move || node(0, report)).expect("spawn failed");
    let mut lines: Vec<String> = std::iter::from_fn(|| rx.recv().ok()).collect();
    root.join().unwrap();
    lines.sort();
    FixtureOutput::ok(lines)
}

fn pingpong(args: &[String]) -> FixtureOutput {
    let rounds: u64 = arg(args, 0, 100);
    let (ping_tx, ping_rx) = channel::<u64>();
    let (pong_tx, pong_rx) = channel::<u64>();
    let echo = spawn(move || {
        while let Ok(n) = ping_rx.recv() {
            pong_tx.send(n + 1).unwrap();
        }
    })
    .expect("spawn failed");
    let mut n = 0;
    for _ in 0..rounds {
        ping_tx.send(n).unwrap();
        n = pong_rx.recv().unwrap();
    }
    drop(ping_tx);
    echo.join().unwrap();
    FixtureOutput {
        status: if n == rounds { 0 } else { 1 },
        lines: vec![format!("rounds={n}")],
    }
}

fn pipeline(_: &[String]) -> FixtureOutput {
    let (src_tx, src_rx) = channel::<u32>();
    let (out_tx, out_rx) = channel::<u32>();
    let source = producer(src_tx, (1..=5).collect());
    let stage = spawn(move || {
        while let Ok(n) = src_rx.recv() {
            out_tx.send(n * n).unwrap();
        }
    })
    .expect("spawn failed");
    let squares: Vec<u32> = std::iter::from_fn(|| out_rx.recv().ok()).collect();
    source.join().unwrap();
    stage.join().unwrap();
    let sum: u32 = squares.iter().sum();
    FixtureOutput {
        status: if sum == 55 { 0 } else { 1 },
        lines: vec![format!("sum={sum}")],
    }
}

fn bulk(args: &[String]) -> FixtureOutput {
    let count: usize = arg(args, 0, 1000);
    let bytes: usize = arg(args, 1, 8);
    let (tx, rx) = channel::<Vec<u8>>();
    let sender = spawn(move || {
        for i in 0..count {
            tx.send(vec![i as u8; bytes]).unwrap();
        }
    })
    .expect("spawn failed");
    let total: usize = std::iter::from_fn(|| rx.recv().ok()).map(|v| v.len()).sum();
    sender.join().unwrap();
    FixtureOutput {
        status: if total == count * bytes { 0 } else { 1 },
        lines: vec![format!("bytes={total}")],
    }
}

fn timeout(args: &[String]) -> FixtureOutput {
    let ms: u64 = arg(args, 0, 5000);
    let (_tx, rx) = channel::<u32>();
    let start = Instant::now();
    let res = rx.recv_timeout(Duration::from_millis(ms));
    let elapsed = start.elapsed().as_millis();
    FixtureOutput {
        status: if res.is_err() { 0 } else { 1 },
        lines: vec![format!("result={res:?}"), format!("elapsed_ms={elapsed}")],
    }
}

fn multirace(_: &[String]) -> FixtureOutput {
    let (tx, rx) = channel::<u32>();
    let mut workers: Vec<_> = (0..3)
        .map(|p| producer(tx.clone(), (0..4).map(|i| p * 100 + i).collect()))
        .collect();
    drop(tx);
    let mut lines: Vec<String> = (0..12).map(|_| recv_line(&rx).1).collect();

    let (ta, ra) = channel::<u32>();
    let (tb, rb) = channel::<u32>();
    workers.push(producer(ta, vec![1000, 1001, 1002]));
    workers.push(producer(tb, vec![2000, 2001, 2002]));
    let mut sel = Select::new();
    sel.add(&ra);
    sel.add(&rb);
    for _ in 0..6 {
        let (i, env) = sel.select_envelope().expect("select failed");
        lines.push(format!(
            "select index={i} from={} payload={}",
            env.sender, env.payload
        ));
    }
    for w in workers {
        w.join().unwrap();
    }
    FixtureOutput::ok(lines)
}

fn pass(_: &[String]) -> FixtureOutput {
    FixtureOutput::ok(vec![])
}

fn fail(_: &[String]) -> FixtureOutput {
    FixtureOutput {
        status: 1,
        lines: vec![],
    }
}

fn abort(_: &[String]) -> FixtureOutput {
    std::process::abort()
}

fn hang(_: &[String]) -> FixtureOutput {
    loop {
        thread::sleep(Duration::from_secs(3600));
    }
}
