//! Dialect-independent trace model.
//!
//! Both supported Chrome-trace families are normalized into per-rank timelines
//! whose timestamps are integer nanoseconds on that rank's own clock. Ranks are
//! never assumed to share a clock; metrics combine ranks only after computing a
//! per-rank quantity.

mod kineto;
mod patterns;
mod reader;
mod xla;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::card::Phase;

pub use kineto::parse_kineto;
pub use patterns::{KinetoPatterns, PatternConfig, PatternError, XlaPatterns};
pub use xla::parse_xla;

/// Integer nanoseconds.
pub type Nanos = i64;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: I/O error: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed trace JSON at byte offset {offset}: {message}")]
    Parse { offset: u64, message: String },
    #[error("trace contains no device kernel events")]
    EmptyTrace,
    #[error("dialect mismatch: {first} is {first_dialect} but {other} is {other_dialect}")]
    DialectMismatch {
        first: String,
        first_dialect: Dialect,
        other: String,
        other_dialect: Dialect,
    },
    #[error("could not determine trace dialect of {0}")]
    UnknownDialect(String),
    #[error("no trace files given")]
    NoInputs,
    #[error("{path}: {source}")]
    InFile {
        path: String,
        #[source]
        source: Box<TraceError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dialect {
    KinetoGpu,
    XlaTpu,
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dialect::KinetoGpu => "KinetoGpu",
            Dialect::XlaTpu => "XlaTpu",
        })
    }
}

/// Dialect selection for [`load_trace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DialectChoice {
    #[default]
    Auto,
    Explicit(Dialect),
}

impl FromStr for DialectChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(DialectChoice::Auto),
            "kineto" | "gpu" | "kinetogpu" => Ok(DialectChoice::Explicit(Dialect::KinetoGpu)),
            "xla" | "tpu" | "xlatpu" => Ok(DialectChoice::Explicit(Dialect::XlaTpu)),
            other => Err(format!("unknown dialect `{other}` (expected auto, kineto or xla)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventClass {
    Compute,
    Collective,
    MemTransfer,
    Marker,
    Other,
}

impl EventClass {
    /// Compute, collective and memory-transfer events: work occupying the device.
    pub fn is_kernel(self) -> bool {
        matches!(self, EventClass::Compute | EventClass::Collective | EventClass::MemTransfer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CollectiveKind {
    AllReduce,
    AllGather,
    ReduceScatter,
    AllToAll,
    Broadcast,
    SendRecv,
    Other,
}

impl CollectiveKind {
    pub const ALL: [CollectiveKind; 7] = [
        CollectiveKind::AllReduce,
        CollectiveKind::AllGather,
        CollectiveKind::ReduceScatter,
        CollectiveKind::AllToAll,
        CollectiveKind::Broadcast,
        CollectiveKind::SendRecv,
        CollectiveKind::Other,
    ];

    /// Lower-case identifier used in metric keys (`bw_allreduce`, `traffic_volume_allgather`).
    pub fn slug(self) -> &'static str {
        match self {
            CollectiveKind::AllReduce => "allreduce",
            CollectiveKind::AllGather => "allgather",
            CollectiveKind::ReduceScatter => "reducescatter",
            CollectiveKind::AllToAll => "alltoall",
            CollectiveKind::Broadcast => "broadcast",
            CollectiveKind::SendRecv => "sendrecv",
            CollectiveKind::Other => "other",
        }
    }
}

impl fmt::Display for CollectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Optional per-event attributes recovered from event arguments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventAttrs {
    pub bytes: Option<u64>,
    pub elem_count: Option<u64>,
    pub elem_size: Option<u64>,
    pub group_size: Option<u32>,
    /// Communicator label shared by all members (e.g. a process-group name).
    pub group_name: Option<String>,
    pub collective: Option<CollectiveKind>,
    /// Achieved occupancy in percent.
    pub occupancy: Option<f64>,
    pub model_flops: Option<f64>,
    /// Source category (`cat` for GPU events, HLO category for TPU events).
    pub category: Option<String>,
    /// Raw step number from a step marker name, when present.
    pub step_number: Option<i64>,
}

impl EventAttrs {
    /// Message size in bytes: explicit byte count, else element count × element size.
    pub fn message_bytes(&self) -> Option<u64> {
        self.bytes.or_else(|| match (self.elem_count, self.elem_size) {
            (Some(n), Some(sz)) => n.checked_mul(sz),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub rank: usize,
    pub stream: String,
    pub name: String,
    pub t_start: Nanos,
    pub duration: Nanos,
    pub class: EventClass,
    pub attrs: EventAttrs,
}

impl TraceEvent {
    pub fn t_end(&self) -> Nanos {
        self.t_start + self.duration
    }

    pub fn collective_kind(&self) -> Option<CollectiveKind> {
        match self.class {
            EventClass::Collective => self.attrs.collective,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepKind {
    TrainStep,
    Prefill,
    DecodeStep,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepWindow {
    /// Ordinal by start time within the rank.
    pub index: usize,
    pub t_start: Nanos,
    pub t_end: Nanos,
    pub kind: StepKind,
    /// Step number as printed in the marker, not interpreted.
    pub raw_number: Option<i64>,
}

impl StepWindow {
    pub fn duration(&self) -> Nanos {
        self.t_end - self.t_start
    }

    pub fn contains(&self, t: Nanos) -> bool {
        t >= self.t_start && t < self.t_end
    }
}

/// Relabels parsed windows for the card's phase.
///
/// Training keeps every window as a train step. Inference marks the first window
/// as the prefill pass and the rest as decode steps, unless the trace holds decode
/// steps only.
pub fn label_windows(windows: &[StepWindow], phase: Phase, first_is_prefill: bool) -> Vec<StepWindow> {
    windows
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let kind = match phase {
                Phase::Training => StepKind::TrainStep,
                Phase::Inference if i == 0 && first_is_prefill => StepKind::Prefill,
                Phase::Inference => StepKind::DecodeStep,
            };
            StepWindow { kind, ..w.clone() }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ParseWarnings {
    pub missing_ts: u64,
    pub missing_dur: u64,
    pub unmatched_copies: u64,
    pub degenerate_steps: u64,
    pub overflow: u64,
}

impl ParseWarnings {
    pub fn total(&self) -> u64 {
        self.missing_ts + self.missing_dur + self.unmatched_copies + self.degenerate_steps + self.overflow
    }

    pub fn merge(&mut self, other: &ParseWarnings) {
        self.missing_ts += other.missing_ts;
        self.missing_dur += other.missing_dur;
        self.unmatched_copies += other.unmatched_copies;
        self.degenerate_steps += other.degenerate_steps;
        self.overflow += other.overflow;
    }
}

/// Output of a single-file parse, before rank assignment.
#[derive(Debug, Clone, Default)]
pub struct TimelineFragment {
    pub events: Vec<TraceEvent>,
    pub steps: Vec<StepWindow>,
    pub warnings: ParseWarnings,
}

impl TimelineFragment {
    /// Stable-sorts events and windows by start time and renumbers windows.
    fn finish(mut self) -> Self {
        self.events.sort_by_key(|e| e.t_start);
        self.steps.sort_by_key(|w| w.t_start);
        for (i, w) in self.steps.iter_mut().enumerate() {
            w.index = i;
        }
        self
    }

    /// Guarded window constructor shared by both parsers.
    fn push_window(&mut self, t_start: Nanos, t_end: Nanos, raw_number: Option<i64>) {
        if t_end > t_start {
            self.steps.push(StepWindow {
                index: self.steps.len(),
                t_start,
                t_end,
                kind: StepKind::TrainStep,
                raw_number,
            });
        } else {
            self.warnings.degenerate_steps += 1;
        }
    }
}

#[derive(Debug, Clone)]
pub struct RankTimeline {
    pub rank: usize,
    pub source: String,
    pub events: Vec<TraceEvent>,
    pub steps: Vec<StepWindow>,
    pub warnings: ParseWarnings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TimeUnit {
    Microseconds,
    Picoseconds,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClockNote {
    pub original_unit: TimeUnit,
    pub conversion: &'static str,
}

impl ClockNote {
    pub fn for_dialect(dialect: Dialect) -> Self {
        match dialect {
            Dialect::KinetoGpu => ClockNote {
                original_unit: TimeUnit::Microseconds,
                conversion: "ns = us * 1000",
            },
            Dialect::XlaTpu => ClockNote {
                original_unit: TimeUnit::Picoseconds,
                conversion: "ns = round(ps / 1000)",
            },
        }
    }
}

/// Immutable multi-rank trace.
#[derive(Debug, Clone)]
pub struct NormalizedTrace {
    pub dialect: Dialect,
    pub ranks: Vec<RankTimeline>,
    pub clock: ClockNote,
}

impl NormalizedTrace {
    /// Assembles a trace from already-parsed fragments; fragment `i` becomes rank `i`.
    pub fn from_fragments(dialect: Dialect, fragments: Vec<(String, TimelineFragment)>) -> Self {
        let ranks = fragments
            .into_iter()
            .enumerate()
            .map(|(rank, (source, frag))| {
                let frag = frag.finish();
                let events = frag
                    .events
                    .into_iter()
                    .map(|mut e| {
                        e.rank = rank;
                        e
                    })
                    .collect();
                RankTimeline {
                    rank,
                    source,
                    events,
                    steps: frag.steps,
                    warnings: frag.warnings,
                }
            })
            .collect();
        NormalizedTrace {
            dialect,
            ranks,
            clock: ClockNote::for_dialect(dialect),
        }
    }

    pub fn num_ranks(&self) -> usize {
        self.ranks.len()
    }

    pub fn warnings(&self) -> ParseWarnings {
        let mut total = ParseWarnings::default();
        for r in &self.ranks {
            total.merge(&r.warnings);
        }
        total
    }

    pub fn events(&self) -> impl Iterator<Item = &TraceEvent> {
        self.ranks.iter().flat_map(|r| r.events.iter())
    }
}

/// Parses one file with the given dialect.
pub fn parse_file(path: &Path, dialect: Dialect, patterns: &PatternConfig) -> Result<TimelineFragment, TraceError> {
    let reader = reader::open(path)?;
    let result = match dialect {
        Dialect::KinetoGpu => parse_kineto(reader, patterns),
        Dialect::XlaTpu => parse_xla(reader, patterns),
    };
    result.map_err(|e| in_file(path, e))
}

/// Inspects events until one decides the dialect: `device_offset_ps`/`device_duration_ps`
/// arguments mean XLA; a `ProfilerStep#` span or a `kernel` event means Kineto.
pub fn detect_dialect(path: &Path) -> Result<Dialect, TraceError> {
    let reader = reader::open(path)?;
    let mut found = None;
    let outcome = reader::for_each_event(reader, |ev| {
        if let Some(args) = &ev.args {
            if args.contains_key("device_offset_ps") || args.contains_key("device_duration_ps") {
                found = Some(Dialect::XlaTpu);
                return false;
            }
        }
        let is_step = ev.name.as_deref().is_some_and(|n| n.starts_with("ProfilerStep#"));
        if is_step || ev.cat.as_deref() == Some("kernel") {
            found = Some(Dialect::KinetoGpu);
            return false;
        }
        true
    });
    match (found, outcome) {
        (Some(d), _) => Ok(d),
        (None, Err(e)) => Err(in_file(path, e)),
        (None, Ok(())) => Err(TraceError::UnknownDialect(path.display().to_string())),
    }
}

/// Loads one rank per file. Paths are sorted lexicographically; rank `i` is the
/// `i`-th path in that order. Files are parsed in parallel.
pub fn load_trace<P: AsRef<Path>>(
    paths: &[P],
    dialect: DialectChoice,
    patterns: &PatternConfig,
) -> Result<NormalizedTrace, TraceError> {
    if paths.is_empty() {
        return Err(TraceError::NoInputs);
    }
    let mut sorted: Vec<PathBuf> = paths.iter().map(|p| p.as_ref().to_path_buf()).collect();
    sorted.sort();

    let dialect = match dialect {
        DialectChoice::Explicit(d) => d,
        DialectChoice::Auto => {
            let detected: Vec<Dialect> = sorted
                .par_iter()
                .map(|p| detect_dialect(p))
                .collect::<Result<_, _>>()?;
            let first = detected[0];
            if let Some(i) = detected.iter().position(|d| *d != first) {
                return Err(TraceError::DialectMismatch {
                    first: sorted[0].display().to_string(),
                    first_dialect: first,
                    other: sorted[i].display().to_string(),
                    other_dialect: detected[i],
                });
            }
            first
        }
    };

    let fragments: Vec<(String, TimelineFragment)> = sorted
        .par_iter()
        .map(|p| parse_file(p, dialect, patterns).map(|f| (p.display().to_string(), f)))
        .collect::<Result<_, _>>()?;
    Ok(NormalizedTrace::from_fragments(dialect, fragments))
}

fn in_file(path: &Path, e: TraceError) -> TraceError {
    match e {
        e @ (TraceError::Io { .. } | TraceError::InFile { .. }) => e,
        other => TraceError::InFile {
            path: path.display().to_string(),
            source: Box::new(other),
        },
    }
}

/// Rounds picoseconds to the nearest nanosecond, halves away from zero.
pub(crate) fn ps_to_ns(ps: i128) -> i128 {
    if ps >= 0 {
        (ps + 500) / 1000
    } else {
        (ps - 500) / 1000
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ps_rounding() {
        assert_eq!(ps_to_ns(2_000_000), 2000);
        assert_eq!(ps_to_ns(1_499), 1);
        assert_eq!(ps_to_ns(1_500), 2);
        assert_eq!(ps_to_ns(-1_500), -2);
    }

    #[test]
    fn inference_labeling() {
        let ws: Vec<StepWindow> = (0..3)
            .map(|i| StepWindow {
                index: i,
                t_start: i as i64 * 10,
                t_end: i as i64 * 10 + 5,
                kind: StepKind::TrainStep,
                raw_number: None,
            })
            .collect();
        let l = label_windows(&ws, Phase::Inference, true);
        assert_eq!(l[0].kind, StepKind::Prefill);
        assert!(l[1..].iter().all(|w| w.kind == StepKind::DecodeStep));
        let l = label_windows(&ws, Phase::Inference, false);
        assert!(l.iter().all(|w| w.kind == StepKind::DecodeStep));
        let l = label_windows(&ws, Phase::Training, true);
        assert!(l.iter().all(|w| w.kind == StepKind::TrainStep));
    }

    #[test]
    fn dialect_choice_parsing() {
        assert_eq!("auto".parse::<DialectChoice>().unwrap(), DialectChoice::Auto);
        assert_eq!(
            "XLA".parse::<DialectChoice>().unwrap(),
            DialectChoice::Explicit(Dialect::XlaTpu)
        );
        assert!("nsys".parse::<DialectChoice>().is_err());
    }
}
