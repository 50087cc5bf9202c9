//! YAML workload cards.
//!
//! Key names follow the published card template (`workload.model.phase`,
//! `Model-executor.model_plan_parallelization.tp`, ...). Unknown keys at any level
//! are kept in per-section `extra` maps so a card survives a parse/serialize cycle
//! unchanged. Optional fields stay `None` when absent; nothing is defaulted.

mod peaks;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};
use serde_yaml::Value;
use thiserror::Error;

pub use peaks::{PeakSpecError, PeakSpecTable};
pub use validate::{validate_submission, Finding, Severity, ValidationOptions, ValidationReport};

#[derive(Debug, Error)]
pub enum CardError {
    #[error("card is not valid YAML: {0}")]
    Parse(String),
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
}

impl CardError {
    fn missing(path: &str) -> Self {
        CardError::Schema {
            path: path.to_string(),
            message: "required field is missing".into(),
        }
    }

    fn range(path: &str, message: impl Into<String>) -> Self {
        CardError::Schema {
            path: path.to_string(),
            message: message.into(),
        }
    }
}

const REQUIRED: &[&str] = &[
    "workload.model.phase",
    "workload.model.model_family",
    "workload.data.batch_size",
    "workload.data.seq_len",
    "workload.hardware.xpu_spec.model",
    "workload.hardware.xpu_spec.total_count",
];

type Extra = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Training,
    Inference,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Training => "training",
            Phase::Inference => "inference",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadCard {
    #[serde(default, deserialize_with = "opt_scalar", skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(default, deserialize_with = "opt_scalar", skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, deserialize_with = "opt_scalar", skip_serializing_if = "Option::is_none")]
    pub hf_url: Option<String>,
    #[serde(default, deserialize_with = "opt_scalar", skip_serializing_if = "Option::is_none")]
    pub trace_url: Option<String>,
    #[serde(default, deserialize_with = "opt_scalar", skip_serializing_if = "Option::is_none")]
    pub contributor: Option<String>,
    #[serde(default, deserialize_with = "opt_scalar", skip_serializing_if = "Option::is_none")]
    pub contact: Option<String>,
    pub workload: Workload,
    #[serde(rename = "Model-executor", default, skip_serializing_if = "Option::is_none")]
    pub model_executor: Option<ModelExecutor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_source: Option<MetricSource>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub model: ModelInfo,
    pub data: DataInfo,
    pub hardware: Hardware,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moe: Option<bool>,
    #[serde(default, deserialize_with = "opt_scalar", skip_serializing_if = "Option::is_none")]
    pub granularity: Option<String>,
    #[serde(deserialize_with = "scalar")]
    pub model_family: String,
    #[serde(default, deserialize_with = "opt_scalar", skip_serializing_if = "Option::is_none")]
    pub precision: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<u64>,
    /// Number of recorded steady-state steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u64>,
    /// Inference only: whether the first step window of each rank is the prefill pass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_step_is_prefill: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_arch: Option<ModelArch>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_params: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_params_active: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_params_embedding: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_layers: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_heads: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_dim: Option<u64>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataInfo {
    pub batch_size: u64,
    pub seq_len: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_len: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_len: Option<u64>,
    #[serde(default, deserialize_with = "opt_scalar", skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hardware {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network_topo: Option<NetworkTopo>,
    pub xpu_spec: XpuSpec,
    #[serde(default, deserialize_with = "opt_scalar", skip_serializing_if = "Option::is_none")]
    pub driver_version: Option<String>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopo {
    #[serde(default, deserialize_with = "opt_scalar", skip_serializing_if = "Option::is_none")]
    pub topology: Option<String>,
    /// Link speeds in gigabits per second; the slowest is the scale-out tier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_gbps: Option<Vec<f64>>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XpuSpec {
    #[serde(rename = "type", default, deserialize_with = "opt_scalar", skip_serializing_if = "Option::is_none")]
    pub xpu_type: Option<String>,
    #[serde(deserialize_with = "scalar")]
    pub model: String,
    pub total_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count_per_node: Option<u64>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelExecutor {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub framework: Option<Framework>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_plan_parallelization: Option<Parallelization>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub communication_library: Option<CommLibrary>,
    #[serde(default, deserialize_with = "opt_list", skip_serializing_if = "Option::is_none")]
    pub protocol_selection: Option<Vec<String>>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Framework {
    #[serde(default, deserialize_with = "opt_scalar", skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, deserialize_with = "opt_scalar", skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(default, deserialize_with = "opt_scalar", skip_serializing_if = "Option::is_none")]
    pub compiler_tool_selection: Option<String>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Parallelization {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp_replicate: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp_shard: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tp: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pp: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cp: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ep: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pp_mb: Option<u64>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CommLibrary {
    #[serde(default, deserialize_with = "opt_scalar", skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, deserialize_with = "opt_scalar", skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<Value>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSource {
    #[serde(default, deserialize_with = "opt_list", skip_serializing_if = "Option::is_none")]
    pub traces: Option<Vec<String>>,
    #[serde(default, deserialize_with = "opt_list", skip_serializing_if = "Option::is_none")]
    pub metrics_specific_trace: Option<Vec<String>>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl WorkloadCard {
    pub fn phase(&self) -> Phase {
        self.workload.model.phase
    }

    pub fn is_moe(&self) -> bool {
        self.workload.model.moe.unwrap_or(false)
    }

    pub fn first_step_is_prefill(&self) -> bool {
        self.workload.model.first_step_is_prefill.unwrap_or(true)
    }

    pub fn batch_size(&self) -> u64 {
        self.workload.data.batch_size
    }

    pub fn seq_len(&self) -> u64 {
        self.workload.data.seq_len
    }

    pub fn hardware_model(&self) -> &str {
        &self.workload.hardware.xpu_spec.model
    }

    pub fn total_devices(&self) -> u64 {
        self.workload.hardware.xpu_spec.total_count
    }

    pub fn parallelization(&self) -> Option<&Parallelization> {
        self.model_executor.as_ref()?.model_plan_parallelization.as_ref()
    }

    /// All unrecognized keys, by dotted path.
    pub fn extras(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        let mut add = |prefix: &str, extra: &Extra| {
            for (k, v) in extra {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                out.insert(key, v.clone());
            }
        };
        add("", &self.extra);
        add("workload", &self.workload.extra);
        add("workload.model", &self.workload.model.extra);
        if let Some(a) = &self.workload.model.model_arch {
            add("workload.model.model_arch", &a.extra);
        }
        add("workload.data", &self.workload.data.extra);
        add("workload.hardware", &self.workload.hardware.extra);
        if let Some(n) = &self.workload.hardware.network_topo {
            add("workload.hardware.network_topo", &n.extra);
        }
        add("workload.hardware.xpu_spec", &self.workload.hardware.xpu_spec.extra);
        if let Some(m) = &self.model_executor {
            add("Model-executor", &m.extra);
            if let Some(f) = &m.framework {
                add("Model-executor.framework", &f.extra);
            }
            if let Some(p) = &m.model_plan_parallelization {
                add("Model-executor.model_plan_parallelization", &p.extra);
            }
            if let Some(c) = &m.communication_library {
                add("Model-executor.communication_library", &c.extra);
            }
        }
        if let Some(s) = &self.metric_source {
            add("metric_source", &s.extra);
        }
        out
    }

    /// Looks up an unrecognized value by dotted path, descending into nested maps.
    pub fn extra(&self, path: &str) -> Option<Value> {
        let extras = self.extras();
        let mut best: Option<(&String, &Value)> = None;
        for (k, v) in &extras {
            if path == k || path.starts_with(&format!("{k}.")) {
                best = Some((k, v));
            }
        }
        let (key, value) = best?;
        let rest = path[key.len()..].trim_start_matches('.');
        let mut cur = value.clone();
        for part in rest.split('.').filter(|p| !p.is_empty()) {
            cur = cur.get(part)?.clone();
        }
        Some(cur)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("card serializes")
    }
}

/// Parses and schema-checks a workload card.
pub fn parse_card(yaml: &str) -> Result<WorkloadCard, CardError> {
    let doc: Value = serde_yaml::from_str(yaml).map_err(|e| CardError::Parse(e.to_string()))?;
    for path in REQUIRED {
        if lookup(&doc, path).is_none_or(Value::is_null) {
            return Err(CardError::missing(path));
        }
    }
    let card: WorkloadCard = serde_path_to_error::deserialize(doc).map_err(|e| CardError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    check_ranges(&card)?;
    Ok(card)
}

fn lookup<'a>(doc: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(doc, |cur, key| cur.get(key))
}

fn check_ranges(card: &WorkloadCard) -> Result<(), CardError> {
    let w = &card.workload;
    if w.data.batch_size < 1 {
        return Err(CardError::range("workload.data.batch_size", "must be >= 1"));
    }
    if w.data.seq_len < 1 {
        return Err(CardError::range("workload.data.seq_len", "must be >= 1"));
    }
    let xpu = &w.hardware.xpu_spec;
    if xpu.total_count < 1 {
        return Err(CardError::range("workload.hardware.xpu_spec.total_count", "must be >= 1"));
    }
    if let Some(per_node) = xpu.count_per_node {
        if per_node < 1 || per_node > xpu.total_count {
            return Err(CardError::range(
                "workload.hardware.xpu_spec.count_per_node",
                "must satisfy 1 <= count_per_node <= total_count",
            ));
        }
    }
    if let Some(arch) = &w.model.model_arch {
        if let (Some(total), Some(emb)) = (arch.num_params, arch.num_params_embedding) {
            if emb > total {
                return Err(CardError::range(
                    "workload.model.model_arch.num_params_embedding",
                    "must not exceed num_params",
                ));
            }
        }
        for (name, v) in [("num_layers", arch.num_layers), ("num_heads", arch.num_heads), ("head_dim", arch.head_dim)] {
            if v == Some(0) {
                return Err(CardError::range(&format!("workload.model.model_arch.{name}"), "must be >= 1"));
            }
        }
    }
    if let Some(p) = card.parallelization() {
        let degrees = [
            ("dp_replicate", p.dp_replicate),
            ("dp_shard", p.dp_shard),
            ("tp", p.tp),
            ("pp", p.pp),
            ("cp", p.cp),
            ("ep", p.ep),
            ("pp_mb", p.pp_mb),
        ];
        for (name, v) in degrees {
            if v == Some(0) {
                return Err(CardError::range(
                    &format!("Model-executor.model_plan_parallelization.{name}"),
                    "parallel degree must be >= 1",
                ));
            }
        }
    }
    Ok(())
}

fn scalar_to_string(v: Value) -> Result<Option<String>, String> {
    match v {
        Value::Null => Ok(None),
        Value::String(s) => Ok(Some(s)),
        Value::Number(n) => Ok(Some(n.to_string())),
        Value::Bool(b) => Ok(Some(b.to_string())),
        other => Err(format!("expected a scalar, found {other:?}")),
    }
}

fn opt_scalar<'de, D: Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    scalar_to_string(Value::deserialize(d)?).map_err(serde::de::Error::custom)
}

fn scalar<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    opt_scalar(d)?.ok_or_else(|| serde::de::Error::custom("expected a value"))
}

/// A list of scalars, or a single comma-separated scalar.
fn opt_list<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<String>>, D::Error> {
    match Value::deserialize(d)? {
        Value::Null => Ok(None),
        Value::Sequence(items) => items
            .into_iter()
            .map(|v| scalar_to_string(v).map(Option::unwrap_or_default))
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
            .map_err(serde::de::Error::custom),
        other => {
            let s = scalar_to_string(other).map_err(serde::de::Error::custom)?.unwrap_or_default();
            Ok(Some(s.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()))
        }
    }
}
