#![allow(dead_code)]

use std::sync::OnceLock;

use traceval_core::card::{parse_card, PeakSpecTable, WorkloadCard};
use traceval_core::metrics::{MetricContext, MetricOptions, MetricResult, Registry};
use traceval_core::trace::{
    CollectiveKind, Dialect, EventAttrs, EventClass, NormalizedTrace, PatternConfig, StepKind, StepWindow,
    TimelineFragment, TraceEvent,
};

pub fn card(phase: &str, extra_model: &str) -> WorkloadCard {
    let yaml = format!(
        r#"
workload:
  model:
    phase: {phase}
    model_family: test
{extra_model}
  data: {{batch_size: 4, seq_len: 512}}
  hardware:
    xpu_spec: {{model: nvidia_a100, total_count: 1}}
"#
    );
    parse_card(&yaml).unwrap()
}

pub fn training() -> WorkloadCard {
    card("training", "")
}

pub fn ev(class: EventClass, name: &str, start: i64, end: i64) -> TraceEvent {
    TraceEvent {
        rank: 0,
        stream: "s0".into(),
        name: name.into(),
        t_start: start,
        duration: end - start,
        class,
        attrs: EventAttrs::default(),
    }
}

pub fn comp(start: i64, end: i64) -> TraceEvent {
    ev(EventClass::Compute, "gemm", start, end)
}

pub fn coll(kind: CollectiveKind, start: i64, end: i64, bytes: Option<u64>, n: Option<u32>) -> TraceEvent {
    let mut e = ev(EventClass::Collective, "nccl", start, end);
    e.stream = "comm".into();
    e.attrs.collective = Some(kind);
    e.attrs.bytes = bytes;
    e.attrs.group_size = n;
    e
}

pub fn window(index: usize, start: i64, end: i64) -> StepWindow {
    StepWindow {
        index,
        t_start: start,
        t_end: end,
        kind: StepKind::TrainStep,
        raw_number: None,
    }
}

/// A rank whose windows are given as consecutive durations starting at 0.
pub fn rank(events: Vec<TraceEvent>, window_durations: &[i64]) -> TimelineFragment {
    let mut t = 0;
    let mut steps = Vec::new();
    for (i, d) in window_durations.iter().enumerate() {
        steps.push(window(i, t, t + d));
        t += d;
    }
    TimelineFragment {
        events,
        steps,
        ..TimelineFragment::default()
    }
}

pub fn trace(dialect: Dialect, ranks: Vec<TimelineFragment>) -> NormalizedTrace {
    NormalizedTrace::from_fragments(
        dialect,
        ranks.into_iter().enumerate().map(|(i, f)| (format!("rank{i}"), f)).collect(),
    )
}

pub fn gpu(ranks: Vec<TimelineFragment>) -> NormalizedTrace {
    trace(Dialect::KinetoGpu, ranks)
}

pub fn metric(card: &WorkloadCard, trace: &NormalizedTrace, key: &str) -> Result<MetricResult, String> {
    metric_with(card, trace, key, MetricOptions::default())
}

pub fn metric_with(
    card: &WorkloadCard,
    trace: &NormalizedTrace,
    key: &str,
    options: MetricOptions,
) -> Result<MetricResult, String> {
    static SHARED: OnceLock<(PeakSpecTable, PatternConfig, Registry)> = OnceLock::new();
    let (peaks, patterns, registry) =
        SHARED.get_or_init(|| (PeakSpecTable::default(), PatternConfig::default(), Registry::catalog()));
    let ctx = MetricContext::new(card, trace, peaks, patterns, options);
    let tool = registry.get(key).unwrap_or_else(|| panic!("unknown metric {key}"));
    tool.evaluate(&ctx).map_err(|e| e.to_string())
}

pub fn value(card: &WorkloadCard, trace: &NormalizedTrace, key: &str) -> f64 {
    metric(card, trace, key).unwrap_or_else(|e| panic!("{key}: {e}")).value
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
