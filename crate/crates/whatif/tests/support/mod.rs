//! Random execution graphs and a fixpoint reference evaluator, shared by the
//! replay property tests and the acceptance run.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use traceval_core::trace::CollectiveKind;
use traceval_whatif::{Algorithm, CommAttrs, ExecutionGraph, NetworkConfig, Node, NodeKind, RankGraph, ReplayMode};

const KINDS: [CollectiveKind; 4] = [
    CollectiveKind::AllReduce,
    CollectiveKind::AllGather,
    CollectiveKind::ReduceScatter,
    CollectiveKind::AllToAll,
];

pub fn node(id: usize, kind: NodeKind, dur_ns: i64, comm: Option<CommAttrs>) -> Node {
    Node {
        id,
        kind,
        dur_ns,
        comm,
        stream: "s".into(),
        name: None,
    }
}

/// Random acyclic per-rank graphs whose collectives appear on every rank in
/// increasing group order, which rules out deadlock.
pub fn random_graph(seed: u64) -> ExecutionGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nranks = rng.gen_range(1..=6);
    let ngroups = rng.gen_range(0..=6);
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut attrs = Vec::new();
    for g in 0..ngroups {
        let members: Vec<usize> = (0..nranks).filter(|_| rng.gen_bool(0.6)).collect();
        if members.is_empty() {
            continue;
        }
        let kind = KINDS[rng.gen_range(0..KINDS.len())];
        attrs.push((g, kind, rng.gen_range(0..1u64 << 28), members.len()));
        groups.insert(g, members);
    }
    let mut ranks = Vec::new();
    for r in 0..nranks {
        let mine: Vec<_> = attrs.iter().filter(|a| groups[&a.0].contains(&r)).collect();
        let ncomp = rng.gen_range(1..=(30 - mine.len()).min(24));
        let total = ncomp + mine.len();
        // Choose which slots hold collectives, keeping their relative order.
        let mut slots: Vec<usize> = (0..total).collect();
        for i in (1..slots.len()).rev() {
            slots.swap(i, rng.gen_range(0..=i));
        }
        let mut comm_slots: Vec<usize> = slots[..mine.len()].to_vec();
        comm_slots.sort_unstable();
        let mut nodes = Vec::with_capacity(total);
        let mut next = mine.iter();
        for id in 0..total {
            let dur = rng.gen_range(0..5_000_000);
            if comm_slots.contains(&id) {
                let &&(group, kind, bytes, size) = next.next().unwrap();
                let c = CommAttrs { kind, bytes, group, size };
                nodes.push(node(id, NodeKind::CommColl, dur, Some(c)));
            } else {
                let kind = if rng.gen_bool(0.2) { NodeKind::Gap } else { NodeKind::Comp };
                nodes.push(node(id, kind, dur, None));
            }
        }
        let mut edges = Vec::new();
        for b in 1..total {
            for a in 0..b {
                if rng.gen_bool(0.15) {
                    edges.push((a, b));
                }
            }
        }
        ranks.push(RankGraph {
            rank: r,
            step_ns: 0,
            nodes,
            edges,
        });
    }
    ExecutionGraph {
        ranks,
        groups,
        unsized_collectives: 0,
        total_collectives: attrs.len(),
    }
}

pub fn net(rng_seed: u64) -> NetworkConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    // Scale-up is never slower than scale-out, as on real fabrics.
    let out_bw = rng.gen_range(1.0..100.0);
    let out_lat = rng.gen_range(0.0..1e-4);
    NetworkConfig {
        scale_up_bandwidth: out_bw * rng.gen_range(1.0..20.0),
        scale_out_bandwidth: out_bw,
        scale_up_domain_size: rng.gen_range(1..=8),
        scale_up_latency: out_lat * rng.gen_range(0.0..1.0),
        scale_out_latency: out_lat,
        algorithm: Algorithm::Ring,
    }
}

/// Ring cost written out per kind, independent of the library's factor table.
pub fn oracle_model_ns(kind: CollectiveKind, bytes: u64, size: usize, members: &[usize], n: &NetworkConfig) -> f64 {
    if size <= 1 {
        return 0.0;
    }
    let d = n.scale_up_domain_size;
    let up = size <= d && members.iter().all(|&m| m / d == members[0] / d);
    let (bw, lat) = if up {
        (n.scale_up_bandwidth, n.scale_up_latency)
    } else {
        (n.scale_out_bandwidth, n.scale_out_latency)
    };
    let s = size as f64;
    // Ring traffic per rank: reduce-scatter plus all-gather for AllReduce, one
    // pass otherwise. Grouped as bytes × share so rounding matches exactly.
    let share = match kind {
        CollectiveKind::AllReduce => 2.0 * (s - 1.0) / s,
        _ => (s - 1.0) / s,
    };
    let moved = bytes as f64 * share;
    (lat + moved / (bw * 1e9)) * 1e9
}

/// Repeatedly evaluates start/finish equations until nothing changes. Nodes
/// that never resolve are reported as unfinished.
pub fn fixpoint(g: &ExecutionGraph, n: &NetworkConfig, mode: ReplayMode) -> Result<Vec<Vec<f64>>, usize> {
    let mut gdur: BTreeMap<usize, f64> = BTreeMap::new();
    for r in &g.ranks {
        for node in &r.nodes {
            if let Some(c) = &node.comm {
                let d = match mode {
                    ReplayMode::Measured => node.dur_ns as f64,
                    ReplayMode::Modeled => oracle_model_ns(c.kind, c.bytes, c.size, &g.groups[&c.group], n),
                };
                let e = gdur.entry(c.group).or_insert(d);
                *e = if mode == ReplayMode::Measured { e.min(d) } else { e.max(d) };
            }
        }
    }
    let mut finish: Vec<Vec<Option<f64>>> = g.ranks.iter().map(|r| vec![None; r.nodes.len()]).collect();
    loop {
        let ready_at = |finish: &Vec<Vec<Option<f64>>>, r: usize, i: usize| -> Option<f64> {
            let mut t = 0.0f64;
            for &(a, b) in &g.ranks[r].edges {
                if b == i {
                    t = t.max(finish[r][a]?);
                }
            }
            Some(t)
        };
        let mut changed = false;
        for r in 0..g.ranks.len() {
            for i in 0..g.ranks[r].nodes.len() {
                if finish[r][i].is_some() {
                    continue;
                }
                let node = &g.ranks[r].nodes[i];
                let value = match &node.comm {
                    None => ready_at(&finish, r, i).map(|t| t + node.dur_ns as f64),
                    Some(c) => {
                        let mut start = Some(0.0f64);
                        for &m in &g.groups[&c.group] {
                            let j = g.ranks[m].nodes.iter().position(|x| x.comm.as_ref().is_some_and(|y| y.group == c.group));
                            start = match (start, j.and_then(|j| ready_at(&finish, m, j))) {
                                (Some(s), Some(t)) => Some(s.max(t)),
                                _ => None,
                            };
                        }
                        start.map(|s| s + gdur[&c.group])
                    }
                };
                if value.is_some() {
                    finish[r][i] = value;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let missing = finish.iter().flatten().filter(|f| f.is_none()).count();
    if missing > 0 {
        return Err(missing);
    }
    Ok(finish.into_iter().map(|r| r.into_iter().map(Option::unwrap).collect()).collect())
}
