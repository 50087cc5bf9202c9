//! Executors turn a config into a performance profile or a failure.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use traceval_core::metrics::{Direction, MetricResult, PerformanceProfile, Registry};
use traceval_core::trace::Dialect;
use traceval_whatif::{replay, ExecutionGraph, NetworkConfig, NodeKind, ReplayMode};

use crate::space::Config;
use crate::{FailureReason, SearchError};

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub profile: PerformanceProfile,
    /// Benchmark-entry files produced by the run, if any.
    pub entry_paths: Vec<String>,
}

pub trait Executor {
    fn execute(&mut self, config: &Config) -> Result<Execution, FailureReason>;
}

impl<F> Executor for F
where
    F: FnMut(&Config) -> Result<Execution, FailureReason>,
{
    fn execute(&mut self, config: &Config) -> Result<Execution, FailureReason> {
        self(config)
    }
}

/// Builds a profile from bare metric values, taking unit and direction from
/// the catalog when the key is known.
pub fn profile_from_values(dialect: Dialect, values: &BTreeMap<String, f64>) -> PerformanceProfile {
    let registry = Registry::catalog();
    let metrics = values
        .iter()
        .map(|(k, &v)| {
            let (unit, direction) = registry
                .get(k)
                .map_or(("", Direction::LowerBetter), |t| (t.unit, t.direction));
            MetricResult {
                key: k.clone(),
                value: v,
                unit: unit.to_string(),
                direction,
                per_rank: None,
                notes: Vec::new(),
            }
        })
        .collect();
    PerformanceProfile {
        workload_card_ref: None,
        dialect,
        metrics,
        skipped: Vec::new(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableEntry {
    config: Config,
    #[serde(default)]
    metrics: BTreeMap<String, f64>,
    #[serde(default)]
    failure: Option<String>,
    #[serde(default)]
    entry_paths: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    #[serde(default = "default_dialect")]
    dialect: Dialect,
    entries: Vec<TableEntry>,
}

fn default_dialect() -> Dialect {
    Dialect::KinetoGpu
}

/// Replays recorded results. Entries either carry metric values or a failure
/// string (`"oom"` maps to [`FailureReason::Oom`]); unknown configs are
/// [`FailureReason::Unmeasured`].
#[derive(Debug, Clone)]
pub struct TableExecutor {
    dialect: Dialect,
    rows: BTreeMap<String, TableEntry>,
}

impl TableExecutor {
    pub fn parse(text: &str) -> Result<Self, SearchError> {
        let file: TableFile = serde_yaml::from_str(text).map_err(|e| SearchError::InvalidExecutor(e.to_string()))?;
        let mut rows = BTreeMap::new();
        for e in file.entries {
            if e.failure.is_some() == !e.metrics.is_empty() {
                return Err(SearchError::InvalidExecutor(format!(
                    "entry {} needs exactly one of `metrics` or `failure`",
                    serde_json::to_string(&e.config).unwrap_or_default()
                )));
            }
            let key = serde_json::to_string(&e.config).expect("config serializes");
            if rows.insert(key.clone(), e).is_some() {
                return Err(SearchError::InvalidExecutor(format!("duplicate entry {key}")));
            }
        }
        Ok(TableExecutor {
            dialect: file.dialect,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl Executor for TableExecutor {
    fn execute(&mut self, config: &Config) -> Result<Execution, FailureReason> {
        let key = serde_json::to_string(config).expect("config serializes");
        let row = self.rows.get(&key).ok_or(FailureReason::Unmeasured)?;
        if let Some(f) = &row.failure {
            return Err(if f.eq_ignore_ascii_case("oom") {
                FailureReason::Oom
            } else {
                FailureReason::Executor(f.clone())
            });
        }
        Ok(Execution {
            profile: profile_from_values(self.dialect, &row.metrics),
            entry_paths: row.entry_paths.clone(),
        })
    }
}

/// How a config value reshapes the simulated run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knob {
    /// Sets the network's scale-up bandwidth (GB/s).
    ScaleUpBandwidth,
    /// Sets the network's scale-out bandwidth (GB/s).
    ScaleOutBandwidth,
    /// Sets the scale-up domain size.
    ScaleUpDomainSize,
    /// Multiplies every collective's byte count.
    CommBytesScale,
    /// Divides every compute node's duration, as when sharding work across `v` devices.
    ComputeDivisor,
}

/// Scores configs by modeled replay of a template graph.
#[derive(Debug, Clone)]
pub struct SimExecutor {
    pub graph: ExecutionGraph,
    pub network: NetworkConfig,
    pub knobs: BTreeMap<String, Knob>,
    pub dialect: Dialect,
}

impl SimExecutor {
    pub fn new(graph: ExecutionGraph, network: NetworkConfig, knobs: BTreeMap<String, Knob>) -> Self {
        SimExecutor {
            graph,
            network,
            knobs,
            dialect: Dialect::KinetoGpu,
        }
    }

    fn apply(&self, config: &Config) -> Result<(ExecutionGraph, NetworkConfig), String> {
        let mut graph = self.graph.clone();
        let mut net = self.network.clone();
        for (key, knob) in &self.knobs {
            let Some(v) = config.get(key) else { continue };
            let x = v
                .as_f64()
                .filter(|x| *x > 0.0 && x.is_finite())
                .ok_or_else(|| format!("knob `{key}` needs a positive number, got {v}"))?;
            match knob {
                Knob::ScaleUpBandwidth => net.scale_up_bandwidth = x,
                Knob::ScaleOutBandwidth => net.scale_out_bandwidth = x,
                Knob::ScaleUpDomainSize => {
                    net.scale_up_domain_size = v.as_u64().ok_or_else(|| format!("`{key}` must be an integer"))? as usize
                }
                Knob::CommBytesScale => {
                    for c in graph.ranks.iter_mut().flat_map(|r| r.nodes.iter_mut()).filter_map(|n| n.comm.as_mut()) {
                        c.bytes = (c.bytes as f64 * x).round() as u64;
                    }
                }
                Knob::ComputeDivisor => {
                    for n in graph.ranks.iter_mut().flat_map(|r| r.nodes.iter_mut()) {
                        if n.kind == NodeKind::Comp {
                            n.dur_ns = (n.dur_ns as f64 / x).round() as i64;
                        }
                    }
                }
            }
        }
        Ok((graph, net))
    }
}

impl Executor for SimExecutor {
    fn execute(&mut self, config: &Config) -> Result<Execution, FailureReason> {
        let (graph, net) = self.apply(config).map_err(FailureReason::Executor)?;
        net.validate().map_err(|e| FailureReason::Executor(e.to_string()))?;
        let out = replay(&graph, &net, ReplayMode::Modeled).map_err(|e| FailureReason::Executor(e.to_string()))?;
        let values = BTreeMap::from([("avg_step_time".to_string(), out.step_time)]);
        Ok(Execution {
            profile: profile_from_values(self.dialect, &values),
            entry_paths: Vec::new(),
        })
    }
}
