//! Conversion of one step of a normalized trace into an execution graph.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use traceval_core::card::{Phase, WorkloadCard};
use traceval_core::trace::{label_windows, CollectiveKind, NormalizedTrace, StepKind, StepWindow};

use crate::WhatIfError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Comp,
    CommColl,
    Gap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommAttrs {
    pub kind: CollectiveKind,
    pub bytes: u64,
    pub group: usize,
    /// Communicator size reported by the trace; may exceed the traced members.
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub kind: NodeKind,
    /// Recorded duration. For collectives this is the measured time, used only
    /// by measured-mode replay.
    pub dur_ns: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comm: Option<CommAttrs>,
    pub stream: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankGraph {
    pub rank: usize,
    /// Length of the source step window.
    pub step_ns: i64,
    pub nodes: Vec<Node>,
    /// `(from, to)` node ids: `to` may start only after `from` finishes.
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionGraph {
    pub ranks: Vec<RankGraph>,
    /// Group id → member ranks in ascending order.
    pub groups: BTreeMap<usize, Vec<usize>>,
    /// Collectives without a message size, converted to fixed-duration compute.
    #[serde(default)]
    pub unsized_collectives: usize,
    #[serde(default)]
    pub total_collectives: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildOptions {
    /// Steady-state window to convert; defaults to the first inner window.
    pub step: Option<usize>,
}

/// Collective instance key: communicator label, kind, size and occurrence index.
/// Group name, kind and size identifying one collective call site.
type SiteKey = (String, CollectiveKind, usize);
type InstanceKey = (String, CollectiveKind, usize, usize);

struct Pending {
    t_start: i64,
    t_end: i64,
    stream: String,
    name: String,
    comm: Option<(CollectiveKind, u64, InstanceKey)>,
}

/// Converts one step per rank into an execution graph.
///
/// Each stream becomes one or more lanes (overlapping events on a stream are
/// split greedily into extra lanes). Idle time between lane neighbours becomes
/// gap nodes, and a single trailing gap on the latest-ending lane pads the rank
/// to its window length. Collectives are matched across ranks by communicator
/// label, kind, size and per-key occurrence index.
pub fn build_graph(trace: &NormalizedTrace, card: &WorkloadCard, opts: BuildOptions) -> Result<ExecutionGraph, WhatIfError> {
    let steady = match card.phase() {
        Phase::Training => StepKind::TrainStep,
        Phase::Inference => StepKind::DecodeStep,
    };
    let mut per_rank = Vec::with_capacity(trace.num_ranks());
    let mut unsized_collectives = 0usize;
    let mut total_collectives = 0usize;

    for rank in &trace.ranks {
        let windows: Vec<StepWindow> = label_windows(&rank.steps, card.phase(), card.first_step_is_prefill())
            .into_iter()
            .filter(|w| w.kind == steady)
            .collect();
        let window = match opts.step {
            Some(k) => windows.get(k).cloned().ok_or(WhatIfError::NoStepWindows {
                rank: rank.rank,
                wanted: k,
                found: windows.len(),
            })?,
            None if windows.len() >= 3 => windows[1].clone(),
            None => {
                return Err(WhatIfError::NoStepWindows {
                    rank: rank.rank,
                    wanted: 1,
                    found: windows.len(),
                })
            }
        };

        let mut occurrences: BTreeMap<SiteKey, usize> = BTreeMap::new();
        let mut pending = Vec::new();
        for e in rank.events.iter().filter(|e| e.class.is_kernel()) {
            let (t_start, t_end) = (e.t_start.max(window.t_start), e.t_end().min(window.t_end));
            if t_end <= t_start {
                continue;
            }
            let comm = e.collective_kind().and_then(|kind| {
                total_collectives += 1;
                match (e.attrs.message_bytes(), e.attrs.group_size) {
                    (Some(bytes), Some(size)) => {
                        let label = e.attrs.group_name.clone().unwrap_or_default();
                        let key = (label, kind, size as usize);
                        let idx = occurrences.entry(key.clone()).or_default();
                        let inst = (key.0, key.1, key.2, *idx);
                        *idx += 1;
                        Some((kind, bytes, inst))
                    }
                    _ => {
                        unsized_collectives += 1;
                        None
                    }
                }
            });
            pending.push(Pending {
                t_start: t_start - window.t_start,
                t_end: t_end - window.t_start,
                stream: e.stream.clone(),
                name: e.name.clone(),
                comm,
            });
        }
        if pending.is_empty() {
            return Err(WhatIfError::EmptyRank(rank.rank));
        }
        per_rank.push((rank.rank, window.duration(), occurrences, pending));
    }

    let groups = match_groups(&per_rank)?;
    let group_ids: BTreeMap<&InstanceKey, usize> = groups.keys().enumerate().map(|(i, k)| (k, i)).collect();

    let ranks = per_rank
        .iter()
        .map(|(rank, step_ns, _, pending)| lay_out(*rank, *step_ns, pending, &group_ids))
        .collect();
    let groups = groups
        .into_iter()
        .enumerate()
        .map(|(i, (_, members))| (i, members))
        .collect();

    let graph = ExecutionGraph {
        ranks,
        groups,
        unsized_collectives,
        total_collectives,
    };
    graph.validate()?;
    Ok(graph)
}

type RankParts = (usize, i64, BTreeMap<SiteKey, usize>, Vec<Pending>);

fn match_groups(per_rank: &[RankParts]) -> Result<BTreeMap<InstanceKey, Vec<usize>>, WhatIfError> {
    // Ranks sharing a key must agree on its occurrence count up to one trailing
    // instance clipped by the window edge.
    let mut counts: BTreeMap<&SiteKey, Vec<(usize, usize)>> = BTreeMap::new();
    for (rank, _, occ, _) in per_rank {
        for (key, &n) in occ {
            counts.entry(key).or_default().push((*rank, n));
        }
    }
    for (key, seen) in &counts {
        let lo = seen.iter().map(|s| s.1).min().unwrap_or(0);
        let hi = seen.iter().map(|s| s.1).max().unwrap_or(0);
        if hi - lo > 1 {
            return Err(WhatIfError::CollectiveMatchFailure(format!(
                "{} group `{}` (size {}) occurs between {lo} and {hi} times across ranks",
                key.1, key.0, key.2
            )));
        }
    }

    let mut groups: BTreeMap<InstanceKey, Vec<usize>> = BTreeMap::new();
    for (rank, _, _, pending) in per_rank {
        for p in pending {
            if let Some((_, _, inst)) = &p.comm {
                groups.entry(inst.clone()).or_default().push(*rank);
            }
        }
    }
    for (inst, members) in &groups {
        if members.len() > inst.2 {
            return Err(WhatIfError::CollectiveMatchFailure(format!(
                "{} #{} of group `{}` has {} participants but size {}",
                inst.1,
                inst.3,
                inst.0,
                members.len(),
                inst.2
            )));
        }
    }
    Ok(groups)
}

fn lay_out(rank: usize, step_ns: i64, pending: &[Pending], group_ids: &BTreeMap<&InstanceKey, usize>) -> RankGraph {
    // Lanes keyed by stream, each holding indices into `pending` in start order.
    let mut lanes: Vec<(String, Vec<usize>, i64)> = Vec::new();
    let mut order: Vec<usize> = (0..pending.len()).collect();
    order.sort_by_key(|&i| (pending[i].stream.clone(), pending[i].t_start, pending[i].t_end));
    for i in order {
        let p = &pending[i];
        let slot = lanes.iter().position(|(s, _, end)| *s == p.stream && *end <= p.t_start);
        match slot {
            Some(l) => {
                lanes[l].1.push(i);
                lanes[l].2 = p.t_end;
            }
            None => lanes.push((p.stream.clone(), vec![i], p.t_end)),
        }
    }
    let latest = lanes
        .iter()
        .enumerate()
        .max_by_key(|(i, (_, _, end))| (*end, std::cmp::Reverse(*i)))
        .map(|(i, _)| i);

    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (lane_idx, (stream, items, _)) in lanes.iter().enumerate() {
        let mut cursor = 0i64;
        let mut prev: Option<usize> = None;
        let mut push = |node: Node, nodes: &mut Vec<Node>, edges: &mut Vec<(usize, usize)>| {
            let id = node.id;
            nodes.push(node);
            if let Some(p) = prev {
                edges.push((p, id));
            }
            prev = Some(id);
        };
        for &i in items {
            let p = &pending[i];
            if p.t_start > cursor {
                let gap = gap_node(nodes.len(), p.t_start - cursor, stream);
                push(gap, &mut nodes, &mut edges);
            }
            let node = match &p.comm {
                Some((kind, bytes, inst)) => Node {
                    id: nodes.len(),
                    kind: NodeKind::CommColl,
                    dur_ns: p.t_end - p.t_start,
                    comm: Some(CommAttrs {
                        kind: *kind,
                        bytes: *bytes,
                        group: group_ids[inst],
                        size: inst.2,
                    }),
                    stream: stream.clone(),
                    name: Some(p.name.clone()),
                },
                None => Node {
                    id: nodes.len(),
                    kind: NodeKind::Comp,
                    dur_ns: p.t_end - p.t_start,
                    comm: None,
                    stream: stream.clone(),
                    name: Some(p.name.clone()),
                },
            };
            push(node, &mut nodes, &mut edges);
            cursor = p.t_end;
        }
        if Some(lane_idx) == latest && cursor < step_ns {
            let gap = gap_node(nodes.len(), step_ns - cursor, stream);
            push(gap, &mut nodes, &mut edges);
        }
    }
    RankGraph {
        rank,
        step_ns,
        nodes,
        edges,
    }
}

fn gap_node(id: usize, dur_ns: i64, stream: &str) -> Node {
    Node {
        id,
        kind: NodeKind::Gap,
        dur_ns,
        comm: None,
        stream: stream.to_string(),
        name: None,
    }
}

impl ExecutionGraph {
    /// Checks structural invariants: dense node ids, valid edges, acyclicity,
    /// non-negative durations and consistent group membership.
    pub fn validate(&self) -> Result<(), WhatIfError> {
        let bad = |m: String| Err(WhatIfError::InvalidGraph(m));
        let mut seen_members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (pos, r) in self.ranks.iter().enumerate() {
            if r.rank != pos {
                return bad(format!("rank entry {pos} is labelled {}", r.rank));
            }
            if r.nodes.is_empty() {
                return bad(format!("rank {pos} has no nodes"));
            }
            for (i, n) in r.nodes.iter().enumerate() {
                if n.id != i {
                    return bad(format!("rank {pos}: node at position {i} has id {}", n.id));
                }
                if n.dur_ns < 0 {
                    return bad(format!("rank {pos}: node {i} has negative duration"));
                }
                match (n.kind, &n.comm) {
                    (NodeKind::CommColl, Some(c)) => {
                        let members = seen_members.entry(c.group).or_default();
                        if members.contains(&pos) {
                            return bad(format!("rank {pos} appears twice in group {}", c.group));
                        }
                        members.push(pos);
                    }
                    (NodeKind::CommColl, None) => return bad(format!("rank {pos}: collective node {i} lacks comm attrs")),
                    (_, Some(_)) => return bad(format!("rank {pos}: non-collective node {i} has comm attrs")),
                    _ => {}
                }
            }
            for &(a, b) in &r.edges {
                if a >= r.nodes.len() || b >= r.nodes.len() {
                    return bad(format!("rank {pos}: edge ({a}, {b}) out of range"));
                }
            }
            if topo_order(r).is_none() {
                return bad(format!("rank {pos}: edges form a cycle"));
            }
        }
        for (g, members) in &mut seen_members {
            members.sort_unstable();
            match self.groups.get(g) {
                Some(declared) if declared == members => {}
                Some(declared) => {
                    return bad(format!("group {g} declares members {declared:?} but nodes reference {members:?}"));
                }
                None => return bad(format!("group {g} is referenced but not declared")),
            }
        }
        if let Some(g) = self.groups.keys().find(|g| !seen_members.contains_key(g)) {
            return bad(format!("group {g} has no member nodes"));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.ranks.iter().map(|r| r.nodes.len()).sum()
    }
}

/// Kahn's algorithm; `None` when the edges contain a cycle.
pub(crate) fn topo_order(r: &RankGraph) -> Option<Vec<usize>> {
    let n = r.nodes.len();
    let mut indeg = vec![0usize; n];
    let mut succ = vec![Vec::new(); n];
    for &(a, b) in &r.edges {
        indeg[b] += 1;
        succ[a].push(b);
    }
    let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &s in &succ[i] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.insert(s);
            }
        }
    }
    (order.len() == n).then_some(order)
}
