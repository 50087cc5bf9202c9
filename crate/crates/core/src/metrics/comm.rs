//! Communication metrics: time fractions, overlap, balance and bandwidth.

use std::collections::BTreeMap;

use super::catalog::algorithm_factor;
use super::{mean_over_ranks, Measured, MetricContext, MetricError, NS_PER_S};
use crate::interval::{clip, IntervalSet};
use crate::trace::{CollectiveKind, EventClass, Nanos, StepWindow, TraceEvent};

/// Integer breakdown of one step's communication time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepComm {
    /// Union length of collective intervals inside the step.
    pub comm: Nanos,
    /// Part of `comm` concurrent with compute.
    pub overlapped: Nanos,
    /// Part of `comm` with no compute running.
    pub exposed: Nanos,
}

impl StepComm {
    /// Overlapped share of communication in percent; `None` for comm-free steps.
    pub fn overlap_percent(&self) -> Option<f64> {
        (self.comm > 0).then(|| self.overlapped as f64 / self.comm as f64 * 100.0)
    }
}

/// Clips one rank's events to `window` and splits its communication time.
pub fn step_comm_breakdown<'a>(events: impl IntoIterator<Item = &'a TraceEvent> + Clone, window: &StepWindow) -> StepComm {
    let comm = IntervalSet::union_of(clip(events.clone(), window, |e| e.class == EventClass::Collective));
    let compute = IntervalSet::union_of(clip(events, window, |e| e.class == EventClass::Compute));
    let overlapped = comm.intersect_len(&compute);
    StepComm {
        comm: comm.len(),
        overlapped,
        exposed: comm.len() - overlapped,
    }
}

fn union_where(events: &[TraceEvent], keep: impl Fn(&TraceEvent) -> bool) -> IntervalSet {
    IntervalSet::union_of(events.iter().filter(|e| keep(e)).map(|e| (e.t_start, e.t_end())))
}

pub(super) fn communication_fraction(ctx: &MetricContext) -> Result<Measured, MetricError> {
    let mut per_rank = BTreeMap::new();
    for rank in &ctx.trace.ranks {
        let active = union_where(&rank.events, |e| e.class.is_kernel()).len();
        if active == 0 {
            continue;
        }
        let comm = union_where(&rank.events, |e| e.class == EventClass::Collective).len();
        per_rank.insert(rank.rank, comm as f64 / active as f64 * 100.0);
    }
    if per_rank.is_empty() {
        return Err(MetricError::NoKernelEvents);
    }
    Ok(mean_over_ranks(per_rank))
}

fn inner_breakdowns(ctx: &MetricContext) -> Result<Vec<(usize, Vec<StepComm>)>, MetricError> {
    ctx.trace
        .ranks
        .iter()
        .map(|rank| {
            let inner = ctx.inner_windows(rank.rank)?;
            let steps = inner.iter().map(|w| step_comm_breakdown(rank.events.iter(), w)).collect();
            Ok((rank.rank, steps))
        })
        .collect()
}

/// Mean overlapped share over inner steps with communication, then over ranks.
pub(super) fn compute_comm_overlap(ctx: &MetricContext) -> Result<Measured, MetricError> {
    let mut per_rank = BTreeMap::new();
    for (rank, steps) in inner_breakdowns(ctx)? {
        let pcts: Vec<f64> = steps.iter().filter_map(StepComm::overlap_percent).collect();
        if !pcts.is_empty() {
            per_rank.insert(rank, pcts.iter().sum::<f64>() / pcts.len() as f64);
        }
    }
    if per_rank.is_empty() {
        return Err(MetricError::AllStepsCommFree);
    }
    Ok(mean_over_ranks(per_rank).note("first and last steps excluded"))
}

/// Mean exposed communication per inner step, in seconds.
pub(super) fn total_communication_time(ctx: &MetricContext) -> Result<Measured, MetricError> {
    let mut per_rank = BTreeMap::new();
    for (rank, steps) in inner_breakdowns(ctx)? {
        let sum: i128 = steps.iter().map(|s| s.exposed as i128).sum();
        per_rank.insert(rank, sum as f64 / steps.len() as f64 / NS_PER_S);
    }
    Ok(mean_over_ranks(per_rank).note("first and last steps excluded"))
}

pub(super) fn load_imbalance_ratio(ctx: &MetricContext) -> Result<Measured, MetricError> {
    let mut per_rank = BTreeMap::new();
    for rank in &ctx.trace.ranks {
        let active = union_where(&rank.events, |e| e.class.is_kernel()).len();
        if active == 0 {
            return Err(MetricError::ZeroActiveRank(rank.rank));
        }
        per_rank.insert(rank.rank, active as f64 / NS_PER_S);
    }
    let max = per_rank.values().cloned().fold(f64::MIN, f64::max);
    let min = per_rank.values().cloned().fold(f64::MAX, f64::min);
    Ok(Measured::with_ranks(max / min, per_rank))
}

/// Mean of `(max − min) / max` duration over collectives matched by kind and
/// per-kind occurrence index.
pub(super) fn straggler(ctx: &MetricContext) -> Result<Measured, MetricError> {
    let per_rank: Vec<BTreeMap<CollectiveKind, Vec<Nanos>>> = ctx
        .trace
        .ranks
        .iter()
        .map(|rank| {
            let mut by_kind: BTreeMap<CollectiveKind, Vec<Nanos>> = BTreeMap::new();
            for e in &rank.events {
                if let Some(kind) = e.collective_kind() {
                    by_kind.entry(kind).or_default().push(e.duration);
                }
            }
            by_kind
        })
        .collect();

    let mut delays = Vec::new();
    let mut truncated = Vec::new();
    for kind in CollectiveKind::ALL {
        let counts: Vec<usize> = per_rank.iter().map(|m| m.get(&kind).map_or(0, Vec::len)).collect();
        let shortest = counts.iter().copied().min().unwrap_or(0);
        if counts.iter().any(|&c| c != shortest) {
            truncated.push(kind);
        }
        for i in 0..shortest {
            let durs = per_rank.iter().map(|m| m[&kind][i]);
            let (lo, hi) = durs.fold((Nanos::MAX, Nanos::MIN), |(lo, hi), d| (lo.min(d), hi.max(d)));
            if hi > 0 {
                delays.push((hi - lo) as f64 / hi as f64);
            }
        }
    }
    if delays.is_empty() {
        return Err(MetricError::NoMatchedCollectives);
    }
    let mut m = Measured::scalar(delays.iter().sum::<f64>() / delays.len() as f64)
        .note(format!("{} matched collective instances", delays.len()));
    for kind in truncated {
        m = m.note(format!("{kind} counts differ across ranks; truncated to the shortest"));
    }
    Ok(m)
}

/// Median effective bandwidth of one collective kind, in decimal GB/s.
pub(super) fn collective_bandwidth(ctx: &MetricContext, kind: CollectiveKind) -> Result<Measured, MetricError> {
    let mut samples = Vec::new();
    let mut no_size = 0usize;
    for e in ctx.trace.events().filter(|e| e.collective_kind() == Some(kind)) {
        let n = match (kind, e.attrs.group_size) {
            (_, Some(n)) => Some(n),
            (CollectiveKind::AllToAll, None) => Some(0),
            _ => None,
        };
        match (e.attrs.message_bytes(), n) {
            (Some(bytes), Some(n)) if e.duration > 0 => {
                samples.push(bytes as f64 * algorithm_factor(kind, n) / e.duration as f64);
            }
            _ => no_size += 1,
        }
    }
    if samples.is_empty() {
        return Err(MetricError::NoSizedCollectives(kind));
    }
    samples.sort_by(f64::total_cmp);
    let median = samples[(samples.len() - 1) / 2];
    let mut m = Measured::scalar(median).note(format!("median of {} events", samples.len()));
    if no_size > 0 {
        m = m.note(format!("{no_size} events without size, group or duration excluded"));
    }
    Ok(m)
}

/// Mean bytes per steady step for one collective kind; events belong to the
/// window containing their start.
pub(super) fn traffic_volume(ctx: &MetricContext, kind: CollectiveKind) -> Result<Measured, MetricError> {
    if !ctx.trace.events().any(|e| e.collective_kind() == Some(kind)) {
        return Err(MetricError::NotApplicable(format!("no {kind} collectives")));
    }
    let mut per_rank = BTreeMap::new();
    let mut no_size = 0usize;
    for rank in &ctx.trace.ranks {
        let windows = ctx.steady_windows(rank.rank);
        if windows.is_empty() {
            return Err(MetricError::NoStepWindows(rank.rank));
        }
        let mut total = 0u128;
        for e in rank.events.iter().filter(|e| e.collective_kind() == Some(kind)) {
            if !windows.iter().any(|w| w.contains(e.t_start)) {
                continue;
            }
            match e.attrs.message_bytes() {
                Some(b) => total += b as u128,
                None => no_size += 1,
            }
        }
        per_rank.insert(rank.rank, total as f64 / windows.len() as f64);
    }
    let m = mean_over_ranks(per_rank);
    Ok(if no_size > 0 {
        m.note(format!("{no_size} events without size excluded"))
    } else {
        m
    })
}
