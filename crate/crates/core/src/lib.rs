//! Trace ingestion, workload cards and the metric catalog for distributed
//! training and inference profiles.
//!
//! A run is described by a [`card::WorkloadCard`] plus one Chrome-trace file per
//! rank. [`trace::load_trace`] normalizes Kineto (GPU) and XLA (TPU) dialects into
//! a common nanosecond timeline; [`metrics::run_suite`] derives the catalog.

pub mod card;
pub mod interval;
pub mod metrics;
pub mod trace;
