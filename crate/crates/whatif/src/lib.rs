//! What-if analysis: turn one training or decode step into an execution graph,
//! replay it under a two-tier network model, and report how much doubling a
//! network resource would shorten the step.

mod graph;
mod network;
mod replay;

use serde::Serialize;
use thiserror::Error;

pub use graph::{build_graph, BuildOptions, CommAttrs, ExecutionGraph, Node, NodeKind, RankGraph};
pub use network::{comm_factor, comm_time_model, Algorithm, NetworkConfig, Resource, Tier};
pub use replay::{group_durations, replay, ReplayMode, ReplayOutcome};

#[derive(Debug, Error)]
pub enum WhatIfError {
    #[error("rank {rank} has {found} steady-state windows; window {wanted} was requested (default needs 3 to pick an inner one)")]
    NoStepWindows { rank: usize, wanted: usize, found: usize },
    #[error("rank {0} has no device events inside the selected step")]
    EmptyRank(usize),
    #[error("collective matching failed: {0}")]
    CollectiveMatchFailure(String),
    #[error("replay deadlocked with {} unfinished nodes", .0.len())]
    DeadlockDetected(Vec<(usize, usize)>),
    #[error("invalid network configuration: {0}")]
    InvalidNetwork(String),
    #[error("invalid execution graph: {0}")]
    InvalidGraph(String),
    #[error("baseline step time is zero")]
    ZeroBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WhatIfResult {
    pub resource: Resource,
    /// Modeled-mode step time under the given network, seconds.
    pub baseline_step_time: f64,
    /// Modeled-mode step time with the resource doubled, seconds.
    pub simulated_step_time: f64,
    /// `(T − T₂ₓ) / T × 100`.
    pub utility: f64,
}

/// Step-time improvement from doubling `resource`, both runs in modeled mode.
pub fn utility(graph: &ExecutionGraph, net: &NetworkConfig, resource: Resource) -> Result<WhatIfResult, WhatIfError> {
    net.validate()?;
    let base = replay(graph, net, ReplayMode::Modeled)?.step_time;
    if base <= 0.0 {
        return Err(WhatIfError::ZeroBaseline);
    }
    let doubled = replay(graph, &net.doubled(resource), ReplayMode::Modeled)?.step_time;
    Ok(WhatIfResult {
        resource,
        baseline_step_time: base,
        simulated_step_time: doubled,
        utility: (base - doubled) / base * 100.0,
    })
}

impl ExecutionGraph {
    /// Deterministic pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("graph serializes");
        s.push('\n');
        s
    }

    /// Parses and validates a document written by [`ExecutionGraph::to_json`].
    pub fn from_json(text: &str) -> Result<Self, WhatIfError> {
        let graph: ExecutionGraph = serde_json::from_str(text).map_err(|e| WhatIfError::InvalidGraph(e.to_string()))?;
        graph.validate()?;
        Ok(graph)
    }
}
