use traceval_core::card::{parse_card, WorkloadCard};
use traceval_core::trace::{
    CollectiveKind, Dialect, EventAttrs, EventClass, NormalizedTrace, StepKind, StepWindow, TimelineFragment, TraceEvent,
};
use traceval_whatif::{
    build_graph, replay, utility, BuildOptions, ExecutionGraph, NetworkConfig, NodeKind, ReplayMode, Resource,
    WhatIfError,
};

const MS: i64 = 1_000_000;

fn card() -> WorkloadCard {
    parse_card(
        "workload:\n  model: {phase: training, model_family: t}\n  data: {batch_size: 1, seq_len: 1}\n  hardware:\n    network_topo: {bandwidth_gbps: [200, 2400]}\n    xpu_spec: {model: nvidia_a100, total_count: 2, count_per_node: 2}\n",
    )
    .unwrap()
}

fn kernel(stream: &str, start: i64, end: i64) -> TraceEvent {
    TraceEvent {
        rank: 0,
        stream: stream.into(),
        name: "k".into(),
        t_start: start,
        duration: end - start,
        class: EventClass::Compute,
        attrs: EventAttrs::default(),
    }
}

fn allreduce(start: i64, end: i64, bytes: u64, n: u32) -> TraceEvent {
    let mut e = kernel("comm", start, end);
    e.name = "ncclAllReduce".into();
    e.class = EventClass::Collective;
    e.attrs.collective = Some(CollectiveKind::AllReduce);
    e.attrs.bytes = Some(bytes);
    e.attrs.group_size = Some(n);
    e
}

/// Three equal windows of `len` starting at `offset`; events are placed in the middle one.
fn rank(events: Vec<TraceEvent>, len: i64, offset: i64) -> TimelineFragment {
    let steps = (0..3)
        .map(|i| StepWindow {
            index: i,
            t_start: offset + i as i64 * len,
            t_end: offset + (i as i64 + 1) * len,
            kind: StepKind::TrainStep,
            raw_number: None,
        })
        .collect();
    let events = events
        .into_iter()
        .map(|mut e| {
            e.t_start += offset + len;
            e
        })
        .collect();
    TimelineFragment {
        events,
        steps,
        ..TimelineFragment::default()
    }
}

fn trace(ranks: Vec<TimelineFragment>) -> NormalizedTrace {
    NormalizedTrace::from_fragments(
        Dialect::KinetoGpu,
        ranks.into_iter().enumerate().map(|(i, f)| (format!("r{i}"), f)).collect(),
    )
}

fn net() -> NetworkConfig {
    NetworkConfig::from_card(&card()).unwrap()
}

#[test]
fn comp_gap_comp_reconstruction() {
    let t = trace(vec![rank(vec![kernel("s", 0, 10 * MS), kernel("s", 12 * MS, 17 * MS)], 17 * MS, 0)]);
    let g = build_graph(&t, &card(), BuildOptions::default()).unwrap();
    let kinds: Vec<NodeKind> = g.ranks[0].nodes.iter().map(|n| n.kind).collect();
    assert_eq!(kinds, [NodeKind::Comp, NodeKind::Gap, NodeKind::Comp]);
    assert_eq!(g.ranks[0].edges, [(0, 1), (1, 2)]);
    let out = replay(&g, &net(), ReplayMode::Measured).unwrap();
    assert_eq!(out.makespan_ns, [17.0 * MS as f64]);
    assert_eq!(out.step_time, 0.017);
}

#[test]
fn matched_allreduce_shares_group() {
    let t = trace(vec![
        rank(vec![allreduce(0, 5 * MS, 1 << 20, 2)], 5 * MS, 0),
        rank(vec![allreduce(0, 5 * MS, 1 << 20, 2)], 5 * MS, 777),
    ]);
    let g = build_graph(&t, &card(), BuildOptions::default()).unwrap();
    assert_eq!(g.groups.len(), 1);
    assert_eq!(g.groups[&0], [0, 1]);
    for r in &g.ranks {
        assert_eq!(r.nodes.len(), 1);
        assert_eq!(r.nodes[0].kind, NodeKind::CommColl);
        assert_eq!(r.nodes[0].comm.as_ref().unwrap().group, 0);
    }
}

#[test]
fn late_arrival_delays_collective() {
    // Rank 1 reaches the collective 3 ms later; rank 0's recorded time includes the wait.
    let t = trace(vec![
        rank(vec![kernel("c", 0, 2 * MS), allreduce(2 * MS, 10 * MS, 8, 2)], 10 * MS, 0),
        rank(vec![kernel("c", 0, 5 * MS), allreduce(5 * MS, 10 * MS, 8, 2)], 10 * MS, 0),
    ]);
    let g = build_graph(&t, &card(), BuildOptions::default()).unwrap();
    let out = replay(&g, &net(), ReplayMode::Measured).unwrap();
    assert_eq!(out.makespan_ns, [10.0 * MS as f64, 10.0 * MS as f64]);
    let coll_finish: Vec<f64> = g
        .ranks
        .iter()
        .map(|r| {
            let id = r.nodes.iter().find(|n| n.kind == NodeKind::CommColl).unwrap().id;
            out.finish_ns[r.rank][id]
        })
        .collect();
    assert_eq!(coll_finish[0], coll_finish[1]);
}

#[test]
fn parallel_streams_and_trailing_gap() {
    let t = trace(vec![
        rank(
            vec![kernel("compute", 0, 6 * MS), allreduce(MS, 4 * MS, 64, 2)],
            10 * MS,
            0,
        ),
        rank(
            vec![kernel("compute", 0, 6 * MS), allreduce(MS, 4 * MS, 64, 2)],
            10 * MS,
            0,
        ),
    ]);
    let g = build_graph(&t, &card(), BuildOptions::default()).unwrap();
    let out = replay(&g, &net(), ReplayMode::Measured).unwrap();
    assert_eq!(out.makespan_ns, [10.0 * MS as f64; 2]);
    let gaps = g.ranks[0].nodes.iter().filter(|n| n.kind == NodeKind::Gap).count();
    // Leading gap on the comm lane plus one trailing gap.
    assert_eq!(gaps, 2);
}

#[test]
fn overlapping_events_on_one_stream_split_lanes() {
    let t = trace(vec![rank(vec![kernel("s", 0, 6), kernel("s", 2, 4), kernel("s", 6, 8)], 8, 0)]);
    let g = build_graph(&t, &card(), BuildOptions::default()).unwrap();
    let out = replay(&g, &net(), ReplayMode::Measured).unwrap();
    assert_eq!(out.makespan_ns, [8.0]);
}

#[test]
fn events_straddling_window_are_clipped() {
    let t = trace(vec![rank(vec![kernel("s", -5, 4), kernel("s", 6, 20)], 10, 0)]);
    let g = build_graph(&t, &card(), BuildOptions::default()).unwrap();
    let durs: Vec<i64> = g.ranks[0].nodes.iter().map(|n| n.dur_ns).collect();
    assert_eq!(durs, [4, 2, 4]);
}

#[test]
fn too_few_windows() {
    let mut f = rank(vec![kernel("s", 0, 1)], 10, 0);
    f.steps.truncate(2);
    let t = trace(vec![f]);
    assert!(matches!(
        build_graph(&t, &card(), BuildOptions::default()),
        Err(WhatIfError::NoStepWindows { found: 2, .. })
    ));
    let g = build_graph(&t, &card(), BuildOptions { step: Some(0) });
    assert!(matches!(g, Err(WhatIfError::EmptyRank(0))));
}

#[test]
fn empty_rank_rejected() {
    let t = trace(vec![rank(vec![kernel("s", 0, 1)], 10, 0), rank(vec![], 10, 0)]);
    assert!(matches!(build_graph(&t, &card(), BuildOptions::default()), Err(WhatIfError::EmptyRank(1))));
}

#[test]
fn mismatched_counts_fail() {
    let ar = |s| allreduce(s, s + 1, 8, 2);
    let t = trace(vec![rank(vec![ar(0), ar(2), ar(4)], 10, 0), rank(vec![ar(0)], 10, 0)]);
    assert!(matches!(
        build_graph(&t, &card(), BuildOptions::default()),
        Err(WhatIfError::CollectiveMatchFailure(_))
    ));
}

#[test]
fn oversubscribed_group_fails() {
    let ar = || allreduce(0, 1, 8, 1);
    let t = trace(vec![rank(vec![ar()], 10, 0), rank(vec![ar()], 10, 0)]);
    assert!(matches!(
        build_graph(&t, &card(), BuildOptions::default()),
        Err(WhatIfError::CollectiveMatchFailure(_))
    ));
}

#[test]
fn unsized_collective_becomes_compute() {
    let mut e = allreduce(0, 5, 8, 2);
    e.attrs.bytes = None;
    let t = trace(vec![rank(vec![e], 5, 0)]);
    let g = build_graph(&t, &card(), BuildOptions::default()).unwrap();
    assert_eq!(g.ranks[0].nodes[0].kind, NodeKind::Comp);
    assert_eq!((g.unsized_collectives, g.total_collectives), (1, 1));
}

#[test]
fn single_collective_utility_is_half() {
    let t = trace(vec![
        rank(vec![allreduce(0, 5 * MS, 1 << 30, 2)], 5 * MS, 0),
        rank(vec![allreduce(0, 5 * MS, 1 << 30, 2)], 5 * MS, 0),
    ]);
    let g = build_graph(&t, &card(), BuildOptions::default()).unwrap();
    let up = utility(&g, &net(), Resource::ScaleUpBandwidth).unwrap();
    assert!((up.utility - 50.0).abs() < 1e-9, "{up:?}");
    assert_eq!(utility(&g, &net(), Resource::ScaleOutBandwidth).unwrap().utility, 0.0);
    assert_eq!(utility(&g, &net(), Resource::ScaleUpDomainSize).unwrap().utility, 0.0);
}

#[test]
fn domain_doubling_moves_group_to_scale_up() {
    let mut n = net();
    n.scale_up_domain_size = 1;
    let t = trace(vec![
        rank(vec![allreduce(0, 5 * MS, 1 << 30, 2)], 5 * MS, 0),
        rank(vec![allreduce(0, 5 * MS, 1 << 30, 2)], 5 * MS, 0),
    ]);
    let g = build_graph(&t, &card(), BuildOptions::default()).unwrap();
    let r = utility(&g, &n, Resource::ScaleUpDomainSize).unwrap();
    // Scale-out 25 GB/s → scale-up 300 GB/s: T₂ₓ/T = 25/300.
    assert!((r.utility - (1.0 - 25.0 / 300.0) * 100.0).abs() < 1e-9);
}

#[test]
fn compute_only_utility_is_zero() {
    let t = trace(vec![rank(vec![kernel("s", 0, 3 * MS), kernel("s", 4 * MS, 9 * MS)], 10 * MS, 0)]);
    let g = build_graph(&t, &card(), BuildOptions::default()).unwrap();
    for r in Resource::ALL {
        assert_eq!(utility(&g, &net(), r).unwrap().utility, 0.0);
    }
}

#[test]
fn export_round_trip() {
    let t = trace(vec![
        rank(vec![kernel("c", 0, 2), allreduce(2, 10, 8, 2)], 10, 0),
        rank(vec![kernel("c", 0, 5), allreduce(5, 10, 8, 2)], 10, 0),
    ]);
    let g = build_graph(&t, &card(), BuildOptions::default()).unwrap();
    let doc = g.to_json();
    let back = ExecutionGraph::from_json(&doc).unwrap();
    assert_eq!(back, g);
    assert_eq!(back.to_json(), doc);
}

#[test]
fn import_rejects_cycles_and_bad_groups() {
    let t = trace(vec![rank(vec![kernel("s", 0, 3), kernel("s", 5, 9)], 10, 0)]);
    let mut g = build_graph(&t, &card(), BuildOptions::default()).unwrap();
    g.ranks[0].edges.push((2, 0));
    assert!(ExecutionGraph::from_json(&g.to_json()).is_err());
    let mut g = build_graph(&t, &card(), BuildOptions::default()).unwrap();
    g.groups.insert(3, vec![0]);
    assert!(ExecutionGraph::from_json(&g.to_json()).is_err());
}
