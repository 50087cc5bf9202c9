//! Step-time, MFU, kernel-mix and memory metrics, plus the catalog listing.

use std::collections::BTreeMap;

use super::comm;
use super::{mean_over_ranks, Applicability, Direction, Measured, MetricContext, MetricError, MetricTool, NS_PER_S};
use crate::card::{ModelArch, Phase};
use crate::interval::IntervalSet;
use crate::trace::{CollectiveKind, Dialect, EventClass, StepKind, TraceEvent};

use Direction::{HigherBetter, LowerBetter};

const GPU: Applicability = Applicability {
    dialect: Some(Dialect::KinetoGpu),
    ..Applicability::ANY
};
const INFERENCE: Applicability = Applicability {
    phase: Some(Phase::Inference),
    ..Applicability::ANY
};
const MULTI_RANK: Applicability = Applicability {
    min_ranks: 2,
    ..Applicability::ANY
};

/// Occupancy above which a long kernel counts as compute-bound (percent).
const COMPUTE_BOUND_OCC: f64 = 70.0;
/// Minimum duration for the compute-bound test.
const COMPUTE_BOUND_MIN_NS: i64 = 10_000;
/// Occupancy below which a kernel counts as memory-bound (percent).
const MEMORY_BOUND_OCC: f64 = 50.0;

/// Collective kinds that get a `traffic_volume_<kind>` tool.
const TRAFFIC_KINDS: [CollectiveKind; 6] = [
    CollectiveKind::AllReduce,
    CollectiveKind::AllGather,
    CollectiveKind::ReduceScatter,
    CollectiveKind::AllToAll,
    CollectiveKind::Broadcast,
    CollectiveKind::SendRecv,
];

pub(super) fn tools() -> Vec<MetricTool> {
    let any = Applicability::ANY;
    let gpu_multi = Applicability { min_ranks: 2, ..GPU };
    let moe = Applicability { requires_moe: true, ..GPU };
    let mut tools = vec![
        MetricTool::new("avg_step_time", "s", LowerBetter, any, avg_step_time),
        MetricTool::new("mfu", "%", HigherBetter, any, mfu),
        MetricTool::new("ttft", "s", LowerBetter, INFERENCE, ttft),
        MetricTool::new("tpot", "s", LowerBetter, INFERENCE, tpot),
        MetricTool::new("mean_sm_coverage", "%", HigherBetter, GPU, mean_sm_coverage),
        MetricTool::new("dominant_kernel_concentration", "%", LowerBetter, any, dominant_kernel_concentration),
        MetricTool::new("compute_bound_fraction", "%", HigherBetter, GPU, |c: &MetricContext| {
            occupancy_fraction(c, |occ, dur| occ > COMPUTE_BOUND_OCC && dur > COMPUTE_BOUND_MIN_NS)
        }),
        MetricTool::new("memory_bound_fraction", "%", LowerBetter, GPU, |c: &MetricContext| {
            occupancy_fraction(c, |occ, _| occ < MEMORY_BOUND_OCC)
        }),
        MetricTool::new("moe_fraction", "%", LowerBetter, moe, moe_fraction),
        MetricTool::new("average_memory_bandwidth", "GB/s", HigherBetter, any, average_memory_bandwidth),
        MetricTool::new("memory_transfer_overhead", "%", LowerBetter, any, memory_transfer_overhead),
        MetricTool::new("communication_fraction", "%", LowerBetter, any, comm::communication_fraction),
        MetricTool::new("total_communication_time", "s", LowerBetter, any, comm::total_communication_time),
        MetricTool::new("compute_comm_overlap", "%", HigherBetter, any, comm::compute_comm_overlap),
        MetricTool::new("load_imbalance_ratio", "ratio", LowerBetter, MULTI_RANK, comm::load_imbalance_ratio),
        MetricTool::new("straggler", "ratio", LowerBetter, gpu_multi, comm::straggler),
    ];
    for kind in [
        CollectiveKind::AllGather,
        CollectiveKind::AllReduce,
        CollectiveKind::ReduceScatter,
        CollectiveKind::AllToAll,
    ] {
        tools.push(MetricTool::new(
            format!("bw_{}", kind.slug()),
            "GB/s",
            HigherBetter,
            any,
            move |c: &MetricContext| comm::collective_bandwidth(c, kind),
        ));
    }
    for kind in TRAFFIC_KINDS {
        tools.push(MetricTool::new(
            format!("traffic_volume_{}", kind.slug()),
            "bytes/step",
            LowerBetter,
            any,
            move |c: &MetricContext| comm::traffic_volume(c, kind),
        ));
    }
    tools
}

fn kernels<'a>(ctx: &'a MetricContext) -> impl Iterator<Item = &'a TraceEvent> + 'a {
    ctx.trace.ranks.iter().flat_map(|r| r.events.iter()).filter(|e| e.class.is_kernel())
}

fn window_mean_s<'w>(windows: impl IntoIterator<Item = &'w crate::trace::StepWindow>) -> Option<f64> {
    let durations: Vec<i64> = windows.into_iter().map(|w| w.duration()).collect();
    if durations.is_empty() {
        return None;
    }
    let sum: i128 = durations.iter().map(|&d| d as i128).sum();
    Some(sum as f64 / durations.len() as f64 / NS_PER_S)
}

/// Mean steady-window duration per rank, then across ranks, in seconds.
pub(super) fn avg_step_time(ctx: &MetricContext) -> Result<Measured, MetricError> {
    let mut per_rank = BTreeMap::new();
    for r in 0..ctx.trace.num_ranks() {
        let mean = window_mean_s(ctx.steady_windows(r)).ok_or(MetricError::NoStepWindows(r))?;
        per_rank.insert(r, mean);
    }
    if per_rank.is_empty() {
        return Err(MetricError::NoStepWindows(0));
    }
    Ok(mean_over_ranks(per_rank))
}

fn ttft(ctx: &MetricContext) -> Result<Measured, MetricError> {
    let mut per_rank = BTreeMap::new();
    for r in 0..ctx.trace.num_ranks() {
        let prefill = ctx.windows(r).iter().filter(|w| w.kind == StepKind::Prefill);
        per_rank.insert(r, window_mean_s(prefill).ok_or(MetricError::MissingPrefill)?);
    }
    if per_rank.is_empty() {
        return Err(MetricError::MissingPrefill);
    }
    Ok(mean_over_ranks(per_rank))
}

fn tpot(ctx: &MetricContext) -> Result<Measured, MetricError> {
    let mut per_rank = BTreeMap::new();
    for r in 0..ctx.trace.num_ranks() {
        per_rank.insert(r, window_mean_s(ctx.steady_windows(r)).ok_or(MetricError::MissingDecode)?);
    }
    if per_rank.is_empty() {
        return Err(MetricError::MissingDecode);
    }
    Ok(mean_over_ranks(per_rank))
}

/// Architecture terms of the per-token FLOP estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchTerms {
    pub params_active: f64,
    pub params_embedding: f64,
    pub layers: f64,
    pub heads: f64,
    pub head_dim: f64,
}

impl ArchTerms {
    /// Reads the terms from a card, naming the first missing field.
    pub fn from_card(arch: Option<&ModelArch>) -> Result<Self, MetricError> {
        let arch = arch.ok_or(MetricError::MissingArchField("workload.model.model_arch"))?;
        let need = |v: Option<u64>, name: &'static str| v.map(|x| x as f64).ok_or(MetricError::MissingArchField(name));
        let terms = ArchTerms {
            params_active: need(
                arch.num_params_active.or(arch.num_params),
                "workload.model.model_arch.num_params_active",
            )?,
            params_embedding: need(arch.num_params_embedding, "workload.model.model_arch.num_params_embedding")?,
            layers: need(arch.num_layers, "workload.model.model_arch.num_layers")?,
            heads: need(arch.num_heads, "workload.model.model_arch.num_heads")?,
            head_dim: need(arch.head_dim, "workload.model.model_arch.head_dim")?,
        };
        if terms.params_active < terms.params_embedding {
            return Err(MetricError::InvalidArch(
                "num_params_active is smaller than num_params_embedding".into(),
            ));
        }
        Ok(terms)
    }
}

/// Model FLOPs per token: `2(N−N_emb) + 4·L·H·Q·S` for inference and three times
/// that (forward plus backward) for training.
pub fn flops_per_token(arch: &ArchTerms, seq_len: f64, phase: Phase) -> f64 {
    let dense = arch.params_active - arch.params_embedding;
    let attention = arch.layers * arch.heads * arch.head_dim * seq_len;
    match phase {
        Phase::Inference => 2.0 * dense + 4.0 * attention,
        Phase::Training => 6.0 * dense + 12.0 * attention,
    }
}

/// `f_token · B · S / T` over the aggregate peak, in percent.
pub fn mfu_percent(f_token: f64, batch: f64, seq_len: f64, step_s: f64, peak_flops: f64, devices: f64) -> f64 {
    let observed = f_token * batch * seq_len / step_s;
    observed / (peak_flops * devices) * 100.0
}

fn mfu(ctx: &MetricContext) -> Result<Measured, MetricError> {
    let model = ctx.card.hardware_model();
    let peak = ctx
        .peaks
        .get(model)
        .ok_or_else(|| MetricError::MissingPeakSpec(model.to_string()))?;
    let devices = ctx.card.total_devices() as f64;
    let peak_note = format!("F_peak = {peak:e} FLOP/s ({model}) x {devices} devices");

    match ctx.trace.dialect {
        Dialect::KinetoGpu => {
            let arch = ArchTerms::from_card(ctx.card.workload.model.model_arch.as_ref())?;
            let seq = ctx.card.seq_len() as f64;
            let f_token = flops_per_token(&arch, seq, ctx.card.phase());
            let step = avg_step_time(ctx)?.value;
            if step <= 0.0 {
                return Err(MetricError::ZeroDenominator);
            }
            let value = mfu_percent(f_token, ctx.card.batch_size() as f64, seq, step, peak, devices);
            Ok(Measured::scalar(value)
                .note(peak_note)
                .note(format!("f_token = {f_token:e} FLOPs, T_step = {step} s")))
        }
        Dialect::XlaTpu => {
            // Per-rank FLOP rate over the union of FLOP-carrying events; ranks run
            // on separate clocks so rates are summed, never their raw intervals.
            let mut rates = BTreeMap::new();
            for rank in &ctx.trace.ranks {
                let carrying: Vec<&TraceEvent> = rank
                    .events
                    .iter()
                    .filter(|e| e.attrs.model_flops.is_some_and(|f| f > 0.0))
                    .collect();
                let busy = IntervalSet::union_of(carrying.iter().map(|e| (e.t_start, e.t_end()))).len();
                if busy == 0 {
                    continue;
                }
                let flops: f64 = carrying.iter().filter_map(|e| e.attrs.model_flops).sum();
                rates.insert(rank.rank, flops / (busy as f64 / NS_PER_S));
            }
            if rates.is_empty() {
                return Err(MetricError::NoFlopsEvents);
            }
            let observed: f64 = rates.values().sum();
            let per_rank = rates.into_iter().map(|(r, v)| (r, v / peak * 100.0)).collect();
            Ok(Measured::with_ranks(observed / (peak * devices) * 100.0, per_rank).note(peak_note))
        }
    }
}

fn mean_sm_coverage(ctx: &MetricContext) -> Result<Measured, MetricError> {
    let (mut weighted, mut total, mut missing) = (0.0, 0i128, 0usize);
    for e in kernels(ctx) {
        match e.attrs.occupancy {
            Some(occ) => {
                weighted += occ * e.duration as f64;
                total += e.duration as i128;
            }
            None => missing += 1,
        }
    }
    if total == 0 {
        return Err(MetricError::NotApplicable("no occupancy data".into()));
    }
    Ok(with_missing(Measured::scalar(weighted / total as f64), missing))
}

fn occupancy_fraction(ctx: &MetricContext, hit: impl Fn(f64, i64) -> bool) -> Result<Measured, MetricError> {
    let (mut matched, mut total, mut missing) = (0i128, 0i128, 0usize);
    for e in kernels(ctx) {
        match e.attrs.occupancy {
            Some(occ) => {
                total += e.duration as i128;
                if hit(occ, e.duration) {
                    matched += e.duration as i128;
                }
            }
            None => missing += 1,
        }
    }
    if total == 0 {
        return Err(MetricError::NotApplicable("no occupancy data".into()));
    }
    Ok(with_missing(Measured::scalar(matched as f64 / total as f64 * 100.0), missing))
}

fn with_missing(m: Measured, missing: usize) -> Measured {
    if missing > 0 {
        m.note(format!("{missing} kernels without occupancy excluded"))
    } else {
        m
    }
}

fn dominant_kernel_concentration(ctx: &MetricContext) -> Result<Measured, MetricError> {
    let mut groups: BTreeMap<&str, i128> = BTreeMap::new();
    let mut total = 0i128;
    for e in kernels(ctx) {
        let key = match ctx.trace.dialect {
            Dialect::KinetoGpu => e.name.as_str(),
            Dialect::XlaTpu => e.attrs.category.as_deref().unwrap_or(e.name.as_str()),
        };
        *groups.entry(key).or_default() += e.duration as i128;
        total += e.duration as i128;
    }
    if total == 0 {
        return Err(MetricError::NoKernelEvents);
    }
    // BTreeMap iterates names in order, so the first maximum is the smallest name.
    let (name, top) = groups
        .iter()
        .fold((None, -1i128), |(best, max), (k, &v)| if v > max { (Some(*k), v) } else { (best, max) });
    Ok(Measured::scalar(top as f64 / total as f64 * 100.0).note(format!("dominant: {}", name.unwrap_or(""))))
}

fn moe_fraction(ctx: &MetricContext) -> Result<Measured, MetricError> {
    let (mut moe, mut total) = (0i128, 0i128);
    for e in kernels(ctx) {
        total += e.duration as i128;
        if ctx.patterns.is_moe_kernel(&e.name) {
            moe += e.duration as i128;
        }
    }
    if total == 0 {
        return Err(MetricError::NoKernelEvents);
    }
    Ok(Measured::scalar(moe as f64 / total as f64 * 100.0).note("MoE kernel-name patterns are configurable defaults"))
}

/// Σ bytes ÷ Σ duration over sized transfers; bytes per ns equals decimal GB/s.
fn average_memory_bandwidth(ctx: &MetricContext) -> Result<Measured, MetricError> {
    let (mut bytes, mut ns, mut no_size) = (0u128, 0i128, 0usize);
    for e in ctx.trace.events().filter(|e| e.class == EventClass::MemTransfer) {
        match e.attrs.bytes {
            Some(b) => {
                bytes += b as u128;
                ns += e.duration as i128;
            }
            None => no_size += 1,
        }
    }
    if ns == 0 {
        return Err(MetricError::NoSizedTransfers);
    }
    let m = Measured::scalar(bytes as f64 / ns as f64);
    Ok(if no_size > 0 {
        m.note(format!("{no_size} transfers without byte counts excluded"))
    } else {
        m
    })
}

/// Non-overlapped transfer time over active time, summed across ranks before dividing.
fn memory_transfer_overhead(ctx: &MetricContext) -> Result<Measured, MetricError> {
    let (mut num, mut den) = (0i128, 0i128);
    let mut per_rank = BTreeMap::new();
    for rank in &ctx.trace.ranks {
        let mem = IntervalSet::union_of(
            rank.events
                .iter()
                .filter(|e| e.class == EventClass::MemTransfer)
                .map(|e| (e.t_start, e.t_end())),
        );
        let compute = IntervalSet::union_of(
            rank.events
                .iter()
                .filter(|e| e.class == EventClass::Compute)
                .map(|e| (e.t_start, e.t_end())),
        );
        let pure = mem.subtract_len(&compute);
        let t_r = match ctx.trace.dialect {
            Dialect::KinetoGpu => {
                let active = IntervalSet::union_of(
                    rank.events
                        .iter()
                        .filter(|e| e.class.is_kernel())
                        .map(|e| (e.t_start, e.t_end())),
                );
                active.span().map_or(0, |s| s.len())
            }
            Dialect::XlaTpu => ctx.windows(rank.rank).iter().map(|w| w.duration()).sum(),
        };
        if t_r > 0 {
            per_rank.insert(rank.rank, pure as f64 / t_r as f64 * 100.0);
        }
        num += pure as i128;
        den += t_r as i128;
    }
    if den == 0 {
        return Err(MetricError::ZeroDenominator);
    }
    Ok(Measured::with_ranks(num as f64 / den as f64 * 100.0, per_rank))
}

/// Ring-algorithm multiplier from message bytes to per-rank wire traffic.
pub fn algorithm_factor(kind: CollectiveKind, group_size: u32) -> f64 {
    let n = group_size as f64;
    match kind {
        CollectiveKind::AllReduce if group_size > 0 => 2.0 * (n - 1.0) / n,
        CollectiveKind::AllGather | CollectiveKind::ReduceScatter if group_size > 0 => (n - 1.0) / n,
        CollectiveKind::AllReduce | CollectiveKind::AllGather | CollectiveKind::ReduceScatter => 0.0,
        _ => 1.0,
    }
}
