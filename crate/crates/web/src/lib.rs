//! Browser viewer for record logs: dump, communication graph and cycle
//! report. `www/index.html` loads the generated bindings.

use std::collections::BTreeSet;
use std::fmt::Write;

use lwrr::analysis::{build_graph, dump, export_dot, find_cycles, CommGraph, CommNode};
use lwrr::{ChannelFlavor, DetChannelId, DetThreadId, EventStatus, EventType, LogEntry, RecordLog};
use wasm_bindgen::prelude::*;

fn parse(bytes: &[u8]) -> Result<RecordLog, String> {
    RecordLog::from_bytes(bytes).map_err(|e| e.to_string())
}

fn js<T>(r: Result<T, String>) -> Result<T, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

/// One line per entry, sorted by thread and event id.
#[wasm_bindgen]
pub fn dump_log(bytes: &[u8]) -> Result<String, JsValue> {
    js(parse(bytes).map(|l| dump(&l)))
}

#[wasm_bindgen]
pub fn graph_dot(bytes: &[u8]) -> Result<String, JsValue> {
    js(parse(bytes).map(|l| export_dot(&build_graph(&l))))
}

/// The communication graph as an SVG document; edges on a cycle are drawn
/// with class `cycle`.
#[wasm_bindgen]
pub fn graph_svg(bytes: &[u8]) -> Result<String, JsValue> {
    js(parse(bytes).map(|l| render_svg(&build_graph(&l))))
}

#[wasm_bindgen]
pub fn cycle_report(bytes: &[u8]) -> Result<String, JsValue> {
    js(parse(bytes).map(|l| find_cycles(&build_graph(&l)).to_string()))
}

/// Names accepted by [`sample_log`].
#[wasm_bindgen]
pub fn sample_names() -> Vec<String> {
    SAMPLES.iter().map(|s| s.to_string()).collect()
}

/// A small built-in log in the binary format.
#[wasm_bindgen]
pub fn sample_log(name: &str) -> Result<Vec<u8>, JsValue> {
    js(sample(name)
        .ok_or_else(|| format!("unknown sample {name}"))
        .and_then(|l| l.to_bytes().map_err(|e| e.to_string())))
}

const SAMPLES: [&str; 3] = ["pingpong", "pipeline", "race"];

fn entry(
    thread: DetThreadId,
    event_id: u64,
    event_type: EventType,
    status: EventStatus,
    ch: &DetChannelId,
) -> LogEntry {
    LogEntry {
        thread,
        event_id,
        event_type,
        flavor: ChannelFlavor::LocalUnbounded,
        data_type: "u64".into(),
        status,
        channels: vec![ch.clone()],
    }
}

/// Logs shaped like what the matching fixture records.
pub fn sample(name: &str) -> Option<RecordLog> {
    let main = DetThreadId::main;
    let t = |p: &[u32]| DetThreadId::from_path(p);
    let ch = |seq| DetChannelId::new(main(), seq);
    let mut entries = Vec::new();
    match name {
        "pingpong" => {
            let (ping, pong) = (ch(1), ch(2));
            for i in 0..3u64 {
                entries.push(entry(
                    main(),
                    2 * i,
                    EventType::Send,
                    EventStatus::SendOk,
                    &ping,
                ));
                entries.push(entry(
                    main(),
                    2 * i + 1,
                    EventType::Recv,
                    EventStatus::Success(t(&[1])),
                    &pong,
                ));
                entries.push(entry(
                    t(&[1]),
                    2 * i,
                    EventType::Recv,
                    EventStatus::Success(main()),
                    &ping,
                ));
                entries.push(entry(
                    t(&[1]),
                    2 * i + 1,
                    EventType::Send,
                    EventStatus::SendOk,
                    &pong,
                ));
            }
        }
        "pipeline" => {
            let (src, out) = (ch(1), ch(2));
            for i in 0..3u64 {
                entries.push(entry(
                    t(&[1]),
                    i,
                    EventType::Send,
                    EventStatus::SendOk,
                    &src,
                ));
                entries.push(entry(
                    t(&[2]),
                    2 * i,
                    EventType::Recv,
                    EventStatus::Success(t(&[1])),
                    &src,
                ));
                entries.push(entry(
                    t(&[2]),
                    2 * i + 1,
                    EventType::Send,
                    EventStatus::SendOk,
                    &out,
                ));
                entries.push(entry(
                    main(),
                    i,
                    EventType::Recv,
                    EventStatus::Success(t(&[2])),
                    &out,
                ));
            }
        }
        "race" => {
            let c = ch(1);
            entries.push(entry(t(&[1]), 0, EventType::Send, EventStatus::SendOk, &c));
            entries.push(entry(t(&[2]), 0, EventType::Send, EventStatus::SendOk, &c));
            entries.push(entry(
                DetThreadId::Unmanaged,
                0,
                EventType::Send,
                EventStatus::SendOk,
                &c,
            ));
            entries.push(entry(
                main(),
                0,
                EventType::Recv,
                EventStatus::Success(t(&[2])),
                &c,
            ));
            entries.push(entry(
                main(),
                1,
                EventType::Recv,
                EventStatus::Success(t(&[1])),
                &c,
            ));
            entries.push(entry(
                main(),
                2,
                EventType::TryRecv,
                EventStatus::Success(DetThreadId::Unmanaged),
                &c,
            ));
            entries.push(entry(main(), 3, EventType::TryRecv, EventStatus::Empty, &c));
        }
        _ => return None,
    }
    Some(entries.into_iter().collect())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

const ROW: f64 = 64.0;
const THREAD_X: f64 = 110.0;
const CHANNEL_X: f64 = 390.0;

/// Threads in a left column, channels in a right one. Thread-to-channel
/// edges bend up, channel-to-thread edges bend down.
pub fn render_svg(g: &CommGraph) -> String {
    let threads: Vec<&CommNode> = g
        .nodes()
        .filter(|n| matches!(n, CommNode::Thread(_)))
        .collect();
    let channels: Vec<&CommNode> = g
        .nodes()
        .filter(|n| matches!(n, CommNode::Channel(_)))
        .collect();
    let pos = |n: &CommNode| -> (f64, f64) {
        let (col, x) = match n {
            CommNode::Thread(_) => (&threads, THREAD_X),
            CommNode::Channel(_) => (&channels, CHANNEL_X),
        };
        let i = col.iter().position(|m| *m == n).unwrap_or(0);
        (x, 50.0 + ROW * i as f64)
    };
    let on_cycle: BTreeSet<(CommNode, CommNode)> = find_cycles(g)
        .cycles
        .iter()
        .flat_map(|c| (0..c.len()).map(move |i| (c[i].clone(), c[(i + 1) % c.len()].clone())))
        .collect();

    let rows = threads.len().max(channels.len()).max(1);
    let height = 40.0 + ROW * rows as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 500 {height}" width="500" height="{height}">"#
    );
    s.push_str(concat!(
        r#"<defs><marker id="arrow" viewBox="0 0 10 10" refX="10" refY="5" "#,
        r#"markerWidth="7" markerHeight="7" orient="auto-start-reverse">"#,
        r#"<path d="M0,0 L10,5 L0,10 z"/></marker></defs>"#,
        "\n"
    ));
    for (a, b, count) in g.edges() {
        let ((x1, y1), (x2, y2)) = (pos(a), pos(b));
        let forward = matches!(a, CommNode::Thread(_));
        let (x1, x2) = if forward {
            (x1 + 45.0, x2 - 45.0)
        } else {
            (x1 - 45.0, x2 + 45.0)
        };
        let bend = if forward { -18.0 } else { 18.0 };
        let (cx, cy) = ((x1 + x2) / 2.0, (y1 + y2) / 2.0 + bend);
        let class = if on_cycle.contains(&(a.clone(), b.clone())) {
            "edge cycle"
        } else {
            "edge"
        };
        let _ = writeln!(
            s,
            r#"<path class="{class}" d="M{x1:.1},{y1:.1} Q{cx:.1},{cy:.1} {x2:.1},{y2:.1}" fill="none" marker-end="url(#arrow)"/><text class="count" x="{cx:.1}" y="{:.1}">{count}</text>"#,
            cy + if forward { -4.0 } else { 12.0 },
        );
    }
    for n in threads.iter().chain(&channels) {
        let (x, y) = pos(n);
        let label = escape(&n.to_string());
        match n {
            CommNode::Thread(t) => {
                let class = if t.is_unmanaged() {
                    "thread unmanaged"
                } else {
                    "thread"
                };
                let _ = writeln!(
                    s,
                    r#"<g class="{class}"><rect x="{:.1}" y="{:.1}" width="90" height="30" rx="3"/><text x="{x:.1}" y="{:.1}">{label}</text></g>"#,
                    x - 45.0,
                    y - 15.0,
                    y + 5.0
                );
            }
            CommNode::Channel(_) => {
                let _ = writeln!(
                    s,
                    r#"<g class="channel"><ellipse cx="{x:.1}" cy="{y:.1}" rx="45" ry="15"/><text x="{x:.1}" y="{:.1}">{label}</text></g>"#,
                    y + 5.0
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}
