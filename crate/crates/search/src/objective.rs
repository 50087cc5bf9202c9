//! Objectives, always reported in maximize form.

use serde::{Deserialize, Serialize};
use traceval_core::metrics::{PerformanceProfile, Registry};

use crate::space::Config;
use crate::SearchError;

fn default_device_keys() -> Vec<String> {
    ["tp", "dp", "pp"].map(String::from).to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Objective {
    /// Score is the negated metric value.
    MinimizeMetric { key: String },
    /// `w·T₀/T + (1−w)·N₀/N`, with T the average step time and N the device
    /// count, taken as the product of the config's `device_keys` values.
    Composite {
        w: f64,
        t0: f64,
        n0: f64,
        #[serde(default = "default_device_keys")]
        device_keys: Vec<String>,
    },
}

/// Score plus the raw quantities it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub score: f64,
    /// The minimized metric, or T for the composite objective.
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub devices: Option<f64>,
}

impl Objective {
    pub fn parse(text: &str) -> Result<Self, SearchError> {
        let o: Objective = serde_yaml::from_str(text).map_err(|e| SearchError::InvalidObjective(e.to_string()))?;
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::InvalidObjective(m));
        match self {
            Objective::MinimizeMetric { key } => {
                if Registry::catalog().get(key).is_none() {
                    return bad(format!("unknown metric `{key}`"));
                }
            }
            Objective::Composite { w, t0, n0, device_keys } => {
                if !(0.0..=1.0).contains(w) {
                    return bad(format!("w = {w} is outside [0, 1]"));
                }
                if !(*t0 > 0.0 && t0.is_finite() && *n0 > 0.0 && n0.is_finite()) {
                    return bad("t0 and n0 must be positive".into());
                }
                if device_keys.is_empty() {
                    return bad("device_keys is empty".into());
                }
            }
        }
        Ok(())
    }

    /// Metric key the objective reads from a profile.
    pub fn metric_key(&self) -> &str {
        match self {
            Objective::MinimizeMetric { key } => key,
            Objective::Composite { .. } => "avg_step_time",
        }
    }

    pub fn score(&self, config: &Config, profile: &PerformanceProfile) -> Result<Scored, String> {
        let key = self.metric_key();
        let value = profile
            .value(key)
            .ok_or_else(|| format!("profile has no `{key}`"))?;
        match self {
            Objective::MinimizeMetric { .. } => Ok(Scored {
                score: -value,
                value,
                devices: None,
            }),
            Objective::Composite { w, t0, n0, device_keys } => {
                let n = devices(config, device_keys)?;
                if value <= 0.0 {
                    return Err(format!("step time {value} is not positive"));
                }
                Ok(Scored {
                    score: composite_score(*w, *t0, *n0, value, n),
                    value,
                    devices: Some(n),
                })
            }
        }
    }
}

pub fn composite_score(w: f64, t0: f64, n0: f64, t: f64, n: f64) -> f64 {
    w * t0 / t + (1.0 - w) * n0 / n
}

/// Product of the integer values of `keys` present in the config.
pub fn devices(config: &Config, keys: &[String]) -> Result<f64, String> {
    let mut n = 1.0;
    let mut found = false;
    for k in keys {
        if let Some(v) = config.get(k) {
            let d = v.as_i64().filter(|d| *d > 0).ok_or_else(|| format!("`{k}` = {v} is not a positive integer"))?;
            n *= d as f64;
            found = true;
        }
    }
    if !found {
        return Err(format!("config sets none of the device keys {keys:?}"));
    }
    Ok(n)
}
