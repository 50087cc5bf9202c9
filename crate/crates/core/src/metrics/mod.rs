//! Metric tools: pure functions from (card, trace) to a scalar, and the suite
//! that runs a registry of them into a [`PerformanceProfile`].

mod catalog;
mod comm;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::card::{Phase, PeakSpecTable, WorkloadCard};
use crate::trace::{label_windows, CollectiveKind, Dialect, NormalizedTrace, PatternConfig, StepKind, StepWindow};

pub use catalog::{algorithm_factor, flops_per_token, mfu_percent, ArchTerms};
pub use comm::{step_comm_breakdown, StepComm};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("rank {0} has no step windows")]
    NoStepWindows(usize),
    #[error("no peak FLOP/s entry for hardware `{0}`")]
    MissingPeakSpec(String),
    #[error("workload card lacks `{0}`")]
    MissingArchField(&'static str),
    #[error("{0}")]
    InvalidArch(String),
    #[error("no events carry model_flops")]
    NoFlopsEvents,
    #[error("no prefill window")]
    MissingPrefill,
    #[error("no decode windows")]
    MissingDecode,
    #[error("no kernel events")]
    NoKernelEvents,
    #[error("rank {rank} has {found} step windows; at least 3 are needed to exclude the first and last")]
    TooFewSteps { rank: usize, found: usize },
    #[error("no inner step contains communication")]
    AllStepsCommFree,
    #[error("denominator is zero")]
    ZeroDenominator,
    #[error("no memory transfers carry byte counts")]
    NoSizedTransfers,
    #[error("no kernel carries an occupancy value")]
    NoOccupancy,
    #[error("rank {0} has zero active time")]
    ZeroActiveRank(usize),
    #[error("no collectives could be matched across ranks")]
    NoMatchedCollectives,
    #[error("no {0} collectives carry message size and group size")]
    NoSizedCollectives(CollectiveKind),
    #[error("tool produced a non-finite value")]
    NonFinite,
}

#[derive(Debug, Error)]
#[error("metric registry is empty")]
pub struct EmptyRegistry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub key: String,
    pub value: f64,
    pub unit: String,
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_rank: Option<BTreeMap<usize, f64>>,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub key: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceProfile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload_card_ref: Option<String>,
    pub dialect: Dialect,
    pub metrics: Vec<MetricResult>,
    #[serde(default)]
    pub skipped: Vec<Skipped>,
}

impl PerformanceProfile {
    pub fn get(&self, key: &str) -> Option<&MetricResult> {
        self.metrics.iter().find(|m| m.key == key)
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.get(key).map(|m| m.value)
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("profile serializes");
        s.push('\n');
        s
    }
}

/// What a tool returns before the suite attaches key, unit and direction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Measured {
    pub value: f64,
    pub per_rank: Option<BTreeMap<usize, f64>>,
    pub notes: Vec<String>,
}

impl Measured {
    pub fn scalar(value: f64) -> Self {
        Measured {
            value,
            ..Measured::default()
        }
    }

    pub fn with_ranks(value: f64, per_rank: BTreeMap<usize, f64>) -> Self {
        Measured {
            value,
            per_rank: Some(per_rank),
            notes: Vec::new(),
        }
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }
}

/// Declared preconditions checked before a tool runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Applicability {
    pub dialect: Option<Dialect>,
    pub phase: Option<Phase>,
    pub requires_moe: bool,
    pub min_ranks: usize,
}

impl Applicability {
    pub const ANY: Applicability = Applicability {
        dialect: None,
        phase: None,
        requires_moe: false,
        min_ranks: 0,
    };

    pub fn check(&self, ctx: &MetricContext) -> Result<(), String> {
        if let Some(d) = self.dialect {
            if ctx.trace.dialect != d {
                return Err(format!("requires {d} trace, got {}", ctx.trace.dialect));
            }
        }
        if let Some(p) = self.phase {
            if ctx.card.phase() != p {
                return Err(format!("requires {} workload", phase_name(p)));
            }
        }
        if self.requires_moe && !ctx.card.is_moe() {
            return Err("workload is not MoE".into());
        }
        if ctx.trace.num_ranks() < self.min_ranks {
            return Err(format!("requires at least {} ranks, trace has {}", self.min_ranks, ctx.trace.num_ranks()));
        }
        Ok(())
    }
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Training => "training",
        Phase::Inference => "inference",
    }
}

pub type ToolFn = dyn Fn(&MetricContext) -> Result<Measured, MetricError> + Send + Sync;

/// One registered metric.
pub struct MetricTool {
    pub key: String,
    pub unit: &'static str,
    pub direction: Direction,
    pub applicability: Applicability,
    func: Box<ToolFn>,
}

impl MetricTool {
    pub fn new<F>(key: impl Into<String>, unit: &'static str, direction: Direction, applicability: Applicability, func: F) -> Self
    where
        F: Fn(&MetricContext) -> Result<Measured, MetricError> + Send + Sync + 'static,
    {
        MetricTool {
            key: key.into(),
            unit,
            direction,
            applicability,
            func: Box::new(func),
        }
    }

    /// Checks applicability, runs the tool and rejects non-finite output.
    pub fn evaluate(&self, ctx: &MetricContext) -> Result<MetricResult, MetricError> {
        self.applicability.check(ctx).map_err(MetricError::NotApplicable)?;
        let m = (self.func)(ctx)?;
        if !m.value.is_finite() {
            return Err(MetricError::NonFinite);
        }
        Ok(MetricResult {
            key: self.key.clone(),
            value: m.value,
            unit: self.unit.to_string(),
            direction: self.direction,
            per_rank: m.per_rank,
            notes: m.notes,
        })
    }
}

impl std::fmt::Debug for MetricTool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetricTool").field("key", &self.key).finish_non_exhaustive()
    }
}

/// Ordered tool list; output order follows registration order.
#[derive(Debug, Default)]
pub struct Registry {
    tools: Vec<MetricTool>,
}

impl Registry {
    pub fn empty() -> Self {
        Registry::default()
    }

    /// The full catalog in its canonical order.
    pub fn catalog() -> Self {
        let mut r = Registry::empty();
        for t in catalog::tools() {
            r.register(t);
        }
        r
    }

    pub fn register(&mut self, tool: MetricTool) {
        self.tools.retain(|t| t.key != tool.key);
        self.tools.push(tool);
    }

    /// Keeps only the named tools, preserving catalog order.
    pub fn retain_keys(&mut self, keys: &[&str]) {
        self.tools.retain(|t| keys.contains(&t.key.as_str()));
    }

    pub fn keys(&self) -> Vec<&str> {
        self.tools.iter().map(|t| t.key.as_str()).collect()
    }

    pub fn get(&self, key: &str) -> Option<&MetricTool> {
        self.tools.iter().find(|t| t.key == key)
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MetricOptions {
    /// Drop the first and last steady-state window from step-averaged metrics.
    pub drop_edge_steps: bool,
}

/// Shared, immutable inputs for every tool.
#[derive(Debug)]
pub struct MetricContext<'a> {
    pub card: &'a WorkloadCard,
    pub trace: &'a NormalizedTrace,
    pub peaks: &'a PeakSpecTable,
    pub patterns: &'a PatternConfig,
    pub options: MetricOptions,
    windows: Vec<Vec<StepWindow>>,
}

impl<'a> MetricContext<'a> {
    pub fn new(
        card: &'a WorkloadCard,
        trace: &'a NormalizedTrace,
        peaks: &'a PeakSpecTable,
        patterns: &'a PatternConfig,
        options: MetricOptions,
    ) -> Self {
        let windows = trace
            .ranks
            .iter()
            .map(|r| label_windows(&r.steps, card.phase(), card.first_step_is_prefill()))
            .collect();
        MetricContext {
            card,
            trace,
            peaks,
            patterns,
            options,
            windows,
        }
    }

    /// All labeled windows of a rank.
    pub fn windows(&self, rank: usize) -> &[StepWindow] {
        &self.windows[rank]
    }

    pub fn steady_kind(&self) -> StepKind {
        match self.card.phase() {
            Phase::Training => StepKind::TrainStep,
            Phase::Inference => StepKind::DecodeStep,
        }
    }

    /// Train steps (training) or decode steps (inference), honoring `drop_edge_steps`.
    pub fn steady_windows(&self, rank: usize) -> Vec<&StepWindow> {
        let kind = self.steady_kind();
        let all: Vec<&StepWindow> = self.windows[rank].iter().filter(|w| w.kind == kind).collect();
        if self.options.drop_edge_steps && all.len() >= 3 {
            all[1..all.len() - 1].to_vec()
        } else {
            all
        }
    }

    /// Steady windows with the first and last always removed.
    pub fn inner_windows(&self, rank: usize) -> Result<Vec<&StepWindow>, MetricError> {
        let kind = self.steady_kind();
        let all: Vec<&StepWindow> = self.windows[rank].iter().filter(|w| w.kind == kind).collect();
        if all.len() < 3 {
            return Err(MetricError::TooFewSteps { rank, found: all.len() });
        }
        Ok(all[1..all.len() - 1].to_vec())
    }
}

/// Runs every tool; failures land in `skipped` and never stop the suite.
pub fn run_suite(ctx: &MetricContext, registry: &Registry) -> Result<PerformanceProfile, EmptyRegistry> {
    if registry.is_empty() {
        return Err(EmptyRegistry);
    }
    let outcomes: Vec<_> = registry.tools.par_iter().map(|t| (t, t.evaluate(ctx))).collect();
    let mut metrics = Vec::new();
    let mut skipped = Vec::new();
    for (tool, outcome) in outcomes {
        match outcome {
            Ok(m) => metrics.push(m),
            Err(e) => skipped.push(Skipped {
                key: tool.key.clone(),
                reason: e.to_string(),
            }),
        }
    }
    Ok(PerformanceProfile {
        workload_card_ref: None,
        dialect: ctx.trace.dialect,
        metrics,
        skipped,
    })
}

/// Mean of per-rank values, with the breakdown attached.
pub(crate) fn mean_over_ranks(per_rank: BTreeMap<usize, f64>) -> Measured {
    let value = per_rank.values().sum::<f64>() / per_rank.len() as f64;
    Measured::with_ranks(value, per_rank)
}

pub(crate) const NS_PER_S: f64 = 1e9;
