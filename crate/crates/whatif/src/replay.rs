//! Discrete-event replay of an execution graph.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::Serialize;

use crate::graph::{ExecutionGraph, NodeKind};
use crate::network::{comm_time_model, NetworkConfig};
use crate::WhatIfError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ReplayMode {
    /// Collectives take their recorded durations.
    Measured,
    /// Collectives take the analytical model's durations.
    Modeled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayOutcome {
    /// Per-rank completion time of the last node, nanoseconds.
    pub makespan_ns: Vec<f64>,
    /// Maximum per-rank makespan, seconds.
    pub step_time: f64,
    /// `finish_ns[rank][node]`.
    #[serde(skip)]
    pub finish_ns: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Finish {
    at: f64,
    rank: usize,
    node: usize,
}

impl Eq for Finish {}

impl Ord for Finish {
    // Reversed so the max-heap pops the earliest event; ties by (rank, node).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .at
            .total_cmp(&self.at)
            .then_with(|| other.rank.cmp(&self.rank))
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Finish {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Duration of each group instance under `mode`, nanoseconds.
///
/// Measured mode uses the shortest member record: members that arrived early
/// spent part of their recorded time waiting for the last arrival.
pub fn group_durations(graph: &ExecutionGraph, net: &NetworkConfig, mode: ReplayMode) -> BTreeMap<usize, f64> {
    let mut out: BTreeMap<usize, f64> = BTreeMap::new();
    for r in &graph.ranks {
        for n in &r.nodes {
            let Some(c) = &n.comm else { continue };
            let d = match mode {
                ReplayMode::Measured => n.dur_ns as f64,
                ReplayMode::Modeled => {
                    let members = graph.groups.get(&c.group).map(Vec::as_slice).unwrap_or(&[]);
                    comm_time_model(c.kind, c.bytes, c.size, members, net) * 1e9
                }
            };
            out.entry(c.group)
                .and_modify(|cur| {
                    *cur = match mode {
                        ReplayMode::Measured => cur.min(d),
                        ReplayMode::Modeled => cur.max(d),
                    }
                })
                .or_insert(d);
        }
    }
    out
}

/// Replays the graph. All ranks start at time 0; a collective starts once every
/// member has reached it and finishes on all members at the same instant.
pub fn replay(graph: &ExecutionGraph, net: &NetworkConfig, mode: ReplayMode) -> Result<ReplayOutcome, WhatIfError> {
    let group_dur = group_durations(graph, net, mode);
    let nranks = graph.ranks.len();
    let mut indeg: Vec<Vec<usize>> = Vec::with_capacity(nranks);
    let mut succ: Vec<Vec<Vec<usize>>> = Vec::with_capacity(nranks);
    for r in &graph.ranks {
        let mut d = vec![0usize; r.nodes.len()];
        let mut s = vec![Vec::new(); r.nodes.len()];
        for &(a, b) in &r.edges {
            d[b] += 1;
            s[a].push(b);
        }
        indeg.push(d);
        succ.push(s);
    }
    let mut finish: Vec<Vec<f64>> = graph.ranks.iter().map(|r| vec![f64::NAN; r.nodes.len()]).collect();
    let mut arrivals: BTreeMap<usize, Vec<(usize, usize, f64)>> = BTreeMap::new();
    let mut heap = BinaryHeap::new();

    let mut ready: Vec<(usize, usize, f64)> = Vec::new();
    for (r, rg) in graph.ranks.iter().enumerate() {
        for (n, _) in rg.nodes.iter().enumerate().filter(|&(n, _)| indeg[r][n] == 0) {
            ready.push((r, n, 0.0));
        }
    }

    loop {
        for (r, n, at) in ready.drain(..) {
            let node = &graph.ranks[r].nodes[n];
            match (&node.kind, &node.comm) {
                (NodeKind::CommColl, Some(c)) => {
                    let members = graph.groups.get(&c.group).map_or(1, Vec::len);
                    let waiting = arrivals.entry(c.group).or_default();
                    waiting.push((r, n, at));
                    if waiting.len() == members {
                        let start = waiting.iter().map(|w| w.2).fold(f64::MIN, f64::max);
                        let end = start + group_dur[&c.group];
                        for &(mr, mn, _) in waiting.iter() {
                            heap.push(Finish { at: end, rank: mr, node: mn });
                        }
                    }
                }
                _ => heap.push(Finish {
                    at: at + node.dur_ns as f64,
                    rank: r,
                    node: n,
                }),
            }
        }
        let Some(f) = heap.pop() else { break };
        finish[f.rank][f.node] = f.at;
        for &s in &succ[f.rank][f.node] {
            indeg[f.rank][s] -= 1;
            if indeg[f.rank][s] == 0 {
                ready.push((f.rank, s, f.at));
            }
        }
    }

    let mut stuck = Vec::new();
    for (r, times) in finish.iter().enumerate() {
        for (n, t) in times.iter().enumerate() {
            if t.is_nan() {
                stuck.push((r, n));
            }
        }
    }
    if !stuck.is_empty() {
        return Err(WhatIfError::DeadlockDetected(stuck));
    }

    let makespan_ns: Vec<f64> = finish.iter().map(|t| t.iter().copied().fold(0.0, f64::max)).collect();
    let step_time = makespan_ns.iter().copied().fold(0.0, f64::max) / 1e9;
    Ok(ReplayOutcome {
        makespan_ns,
        step_time,
        finish_ns: finish,
    })
}
