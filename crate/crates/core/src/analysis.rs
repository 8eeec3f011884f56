//! Offline analysis of record logs.
//!
//! The communication graph is bipartite: thread nodes and channel nodes,
//! with an edge from a thread to every channel it sent on and from a
//! channel to every thread that received from it. A cycle in this graph is
//! a necessary condition for a communication deadlock, not a sufficient
//! one, and one acyclic execution says nothing about other executions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use crate::id::{DetChannelId, DetThreadId};
use crate::log::{EventStatus, EventType, LogEntry, RecordLog};
use crate::replay::render_channels;

/// One line per entry.
pub fn dump_entry(e: &LogEntry) -> String {
    format!(
        "{} {} {} {} {} {} ch={}",
        e.thread,
        e.event_id,
        e.event_type,
        e.flavor,
        e.data_type,
        e.status,
        render_channels(&e.channels)
    )
}

/// Header line followed by one line per entry, sorted by thread then
/// event id.
pub fn dump(log: &RecordLog) -> String {
    let mut out = format!("# lwrr log v1: {} records\n", log.len());
    for e in log.iter() {
        out.push_str(&dump_entry(e));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CommNode {
    Thread(DetThreadId),
    Channel(DetChannelId),
}

impl CommNode {
    fn dot_id(&self) -> String {
        match self {
            CommNode::Thread(t) => format!("\"t:{t}\""),
            CommNode::Channel(c) => format!("\"c:{c}\""),
        }
    }
}

impl fmt::Display for CommNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CommNode::Thread(t) => write!(f, "{t}"),
            CommNode::Channel(c) => write!(f, "{c}"),
        }
    }
}

/// Who talked to whom, with edge multiplicities.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommGraph {
    nodes: BTreeSet<CommNode>,
    edges: BTreeMap<(CommNode, CommNode), u64>,
}

impl CommGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, node: CommNode) {
        self.nodes.insert(node);
    }

    /// Adds `count` to the edge's multiplicity, creating both endpoints.
    pub fn add_edge(&mut self, from: CommNode, to: CommNode, count: u64) {
        self.nodes.insert(from.clone());
        self.nodes.insert(to.clone());
        *self.edges.entry((from, to)).or_insert(0) += count;
    }

    pub fn nodes(&self) -> impl Iterator<Item = &CommNode> {
        self.nodes.iter()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&CommNode, &CommNode, u64)> {
        self.edges.iter().map(|((a, b), n)| (a, b, *n))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn successors<'a>(&'a self, node: &'a CommNode) -> impl Iterator<Item = &'a CommNode> + 'a {
        self.edges
            .range((node.clone(), CommNode::Thread(DetThreadId::main()))..)
            .take_while(move |((a, _), _)| a == node)
            .map(|((_, b), _)| b)
    }
}

/// Builds the graph from recorded sends and successful receives.
pub fn build_graph(log: &RecordLog) -> CommGraph {
    let mut g = CommGraph::new();
    for e in log.iter() {
        let thread = CommNode::Thread(e.thread.clone());
        g.add_node(thread.clone());
        for ch in &e.channels {
            g.add_node(CommNode::Channel(ch.clone()));
        }
        match (&e.event_type, &e.status) {
            (EventType::Send, EventStatus::SendOk) => {
                if let Some(ch) = e.channels.first() {
                    g.add_edge(thread, CommNode::Channel(ch.clone()), 1);
                }
            }
            (EventType::Select, EventStatus::SelectedIndex { index, .. }) => {
                if let Some(ch) = e.channels.get(*index as usize) {
                    g.add_edge(CommNode::Channel(ch.clone()), thread, 1);
                }
            }
            (
                EventType::Recv | EventType::TryRecv | EventType::TimeoutRecv,
                EventStatus::Success(_),
            ) => {
                if let Some(ch) = e.channels.first() {
                    g.add_edge(CommNode::Channel(ch.clone()), thread, 1);
                }
            }
            _ => {}
        }
    }
    g
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering. Threads are boxes, channels ellipses, edge labels
/// are event counts. Unmanaged threads are drawn dashed.
pub fn export_dot(g: &CommGraph) -> String {
    if g.is_empty() {
        return "digraph comm {}\n".to_string();
    }
    let mut out = String::from("digraph comm {\n");
    for n in g.nodes() {
        let attrs = match n {
            CommNode::Thread(DetThreadId::Unmanaged) => {
                "shape=box, style=dashed, label=\"NONE (unmanaged)\"".to_string()
            }
            CommNode::Thread(t) => format!("shape=box, label=\"{}\"", dot_escape(&t.to_string())),
            CommNode::Channel(c) => {
                format!("shape=ellipse, label=\"{}\"", dot_escape(&c.to_string()))
            }
        };
        let _ = writeln!(out, "  {} [{attrs}];", n.dot_id());
    }
    for (a, b, count) in g.edges() {
        let _ = writeln!(
            out,
            "  {} -> {} [label=\"{count}\"];",
            a.dot_id(),
            b.dot_id()
        );
    }
    out.push_str("}\n");
    out
}

/// Simple cycles of a graph, each listed from its smallest node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CycleReport {
    pub cycles: Vec<Vec<CommNode>>,
}

impl CycleReport {
    pub fn is_acyclic(&self) -> bool {
        self.cycles.is_empty()
    }
}

impl fmt::Display for CycleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.cycles.is_empty() {
            writeln!(f, "no communication cycles in this execution")?;
        } else {
            writeln!(f, "{} communication cycle(s):", self.cycles.len())?;
            for c in &self.cycles {
                let parts: Vec<String> = c.iter().map(ToString::to_string).collect();
                writeln!(f, "  {} -> {}", parts.join(" -> "), c[0])?;
            }
        }
        write!(
            f,
            "note: an acyclic graph for one execution does not prove the program is deadlock-free"
        )
    }
}

/// Enumerates every simple cycle.
///
/// Nodes are visited in order; a search rooted at node `s` only walks
/// through nodes greater than `s`, so each cycle is found exactly once,
/// starting from its smallest node.
pub fn find_cycles(g: &CommGraph) -> CycleReport {
    let order: Vec<&CommNode> = g.nodes().collect();
    let index: BTreeMap<&CommNode, usize> =
        order.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let adj: Vec<Vec<usize>> = order
        .iter()
        .map(|n| {
            let mut next: Vec<usize> = g.successors(n).map(|m| index[m]).collect();
            next.sort_unstable();
            next.dedup();
            next
        })
        .collect();

    let mut cycles = Vec::new();
    let mut path = Vec::new();
    let mut on_path = vec![false; order.len()];
    for start in 0..order.len() {
        path.push(start);
        on_path[start] = true;
        walk(start, start, &adj, &mut path, &mut on_path, &mut cycles);
        on_path[start] = false;
        path.pop();
    }
    CycleReport {
        cycles: cycles
            .into_iter()
            .map(|c: Vec<usize>| c.into_iter().map(|i| order[i].clone()).collect())
            .collect(),
    }
}

fn walk(
    start: usize,
    at: usize,
    adj: &[Vec<usize>],
    path: &mut Vec<usize>,
    on_path: &mut [bool],
    out: &mut Vec<Vec<usize>>,
) {
    for &next in &adj[at] {
        if next == start {
            out.push(path.clone());
        } else if next > start && !on_path[next] {
            path.push(next);
            on_path[next] = true;
            walk(start, next, adj, path, on_path, out);
            on_path[next] = false;
            path.pop();
        }
    }
}
