//! Event classification tables.
//!
//! Kernel and HLO naming drifts between library versions, so the regex tables are
//! data: a default set ships in `config/patterns.json` and any section can be
//! replaced by a user-supplied JSON file.

use std::collections::BTreeMap;

use regex::Regex;
use serde::Deserialize;
use thiserror::Error;

use super::CollectiveKind;

const DEFAULT_PATTERNS: &str = include_str!("../../config/patterns.json");

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("invalid pattern file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid regex `{pattern}`: {source}")]
    Regex {
        pattern: String,
        #[source]
        source: regex::Error,
    },
}

#[derive(Debug, Clone, Deserialize)]
struct PatternSpec {
    #[serde(default)]
    kineto: Option<KinetoSpec>,
    #[serde(default)]
    xla: Option<XlaSpec>,
    #[serde(default)]
    moe: Option<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
struct KinetoSpec {
    step_marker: String,
    device_categories: Vec<String>,
    collectives: BTreeMap<CollectiveKind, Vec<String>>,
    mem_transfer: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct XlaSpec {
    step_marker: String,
    collectives: BTreeMap<CollectiveKind, Vec<String>>,
    compute: Vec<String>,
    exclude: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct KinetoPatterns {
    pub step_marker: Regex,
    pub device_categories: Vec<String>,
    /// Checked in `CollectiveKind` order; the first kind with a match wins.
    pub collectives: Vec<(CollectiveKind, Vec<Regex>)>,
    pub mem_transfer: Vec<Regex>,
}

#[derive(Debug, Clone)]
pub struct XlaPatterns {
    /// Plain substring looked for in event names.
    pub step_marker: String,
    pub collectives: Vec<(CollectiveKind, Vec<Regex>)>,
    pub compute: Vec<Regex>,
    pub exclude: Vec<Regex>,
}

/// Compiled classification tables.
#[derive(Debug, Clone)]
pub struct PatternConfig {
    pub kineto: KinetoPatterns,
    pub xla: XlaPatterns,
    pub moe: Vec<Regex>,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self::from_json(DEFAULT_PATTERNS).expect("shipped pattern table is valid")
    }
}

impl PatternConfig {
    /// Parses an override file. Sections that are absent keep their defaults.
    pub fn from_json(text: &str) -> Result<Self, PatternError> {
        let spec: PatternSpec = serde_json::from_str(text)?;
        let defaults: PatternSpec = serde_json::from_str(DEFAULT_PATTERNS)?;
        let kineto = spec.kineto.or(defaults.kineto).expect("default kineto section");
        let xla = spec.xla.or(defaults.xla).expect("default xla section");
        let moe = spec.moe.or(defaults.moe).unwrap_or_default();

        Ok(PatternConfig {
            kineto: KinetoPatterns {
                step_marker: compile(&kineto.step_marker)?,
                device_categories: kineto.device_categories,
                collectives: compile_kinds(kineto.collectives)?,
                mem_transfer: compile_all(&kineto.mem_transfer)?,
            },
            xla: XlaPatterns {
                step_marker: xla.step_marker,
                collectives: compile_kinds(xla.collectives)?,
                compute: compile_all(&xla.compute)?,
                exclude: compile_all(&xla.exclude)?,
            },
            moe: compile_all(&moe)?,
        })
    }

    pub fn is_moe_kernel(&self, name: &str) -> bool {
        any_match(&self.moe, name)
    }
}

pub(crate) fn any_match(set: &[Regex], text: &str) -> bool {
    set.iter().any(|r| r.is_match(text))
}

pub(crate) fn match_kind(table: &[(CollectiveKind, Vec<Regex>)], text: &str) -> Option<CollectiveKind> {
    table.iter().find(|(_, res)| any_match(res, text)).map(|(k, _)| *k)
}

fn compile(pattern: &str) -> Result<Regex, PatternError> {
    Regex::new(pattern).map_err(|source| PatternError::Regex {
        pattern: pattern.to_string(),
        source,
    })
}

fn compile_all(patterns: &[String]) -> Result<Vec<Regex>, PatternError> {
    patterns.iter().map(|p| compile(p)).collect()
}

fn compile_kinds(table: BTreeMap<CollectiveKind, Vec<String>>) -> Result<Vec<(CollectiveKind, Vec<Regex>)>, PatternError> {
    table
        .into_iter()
        .map(|(k, ps)| Ok((k, compile_all(&ps)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_compile() {
        let p = PatternConfig::default();
        assert_eq!(
            match_kind(&p.kineto.collectives, "ncclDevKernel_AllReduce_Sum_f32_RING_LL"),
            Some(CollectiveKind::AllReduce)
        );
        assert_eq!(match_kind(&p.kineto.collectives, "ncclKernel_SendRecv"), Some(CollectiveKind::SendRecv));
        assert_eq!(match_kind(&p.kineto.collectives, "ncclKernel_Foo"), Some(CollectiveKind::Other));
        assert_eq!(match_kind(&p.xla.collectives, "broadcast"), None);
        assert_eq!(match_kind(&p.xla.collectives, "all-gather"), Some(CollectiveKind::AllGather));
        assert!(p.is_moe_kernel("fused_moe_expert_gemm"));
        assert!(!p.is_moe_kernel("gemm_fwd"));
    }

    #[test]
    fn partial_override_keeps_other_sections() {
        let p = PatternConfig::from_json(r#"{"moe": ["^mymoe"]}"#).unwrap();
        assert!(p.is_moe_kernel("mymoe_kernel"));
        assert!(!p.is_moe_kernel("expert"));
        assert!(p.kineto.step_marker.is_match("ProfilerStep#3"));
    }

    #[test]
    fn bad_regex_rejected() {
        assert!(matches!(
            PatternConfig::from_json(r#"{"moe": ["("]}"#),
            Err(PatternError::Regex { .. })
        ));
    }
}
