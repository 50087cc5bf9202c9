//! Declared configuration spaces.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::SearchError;

/// One proposal: dimension key to chosen value.
pub type Config = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimType {
    Int,
    Bool,
    Enum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimension {
    pub key: String,
    #[serde(rename = "type")]
    pub ty: DimType,
    /// May be omitted for `bool`, meaning `[false, true]`.
    #[serde(default)]
    pub choices: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigSpace {
    pub dimensions: Vec<Dimension>,
}

impl ConfigSpace {
    /// Parses JSON or YAML and validates the result.
    pub fn parse(text: &str) -> Result<Self, SearchError> {
        let mut space: ConfigSpace = serde_yaml::from_str(text).map_err(|e| SearchError::InvalidSpace(e.to_string()))?;
        for d in &mut space.dimensions {
            if d.ty == DimType::Bool && d.choices.is_empty() {
                d.choices = vec![Value::Bool(false), Value::Bool(true)];
            }
        }
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::InvalidSpace(m));
        if self.dimensions.is_empty() {
            return bad("space has no dimensions".into());
        }
        let mut keys = BTreeSet::new();
        for d in &self.dimensions {
            if !keys.insert(d.key.as_str()) {
                return bad(format!("duplicate dimension `{}`", d.key));
            }
            if d.choices.is_empty() {
                return bad(format!("dimension `{}` has no choices", d.key));
            }
            for c in &d.choices {
                let ok = match d.ty {
                    DimType::Int => c.as_i64().is_some(),
                    DimType::Bool => c.is_boolean(),
                    DimType::Enum => c.is_string(),
                };
                if !ok {
                    return bad(format!("dimension `{}`: choice {c} does not match type {:?}", d.key, d.ty));
                }
            }
            let distinct: BTreeSet<String> = d.choices.iter().map(Value::to_string).collect();
            if distinct.len() != d.choices.len() {
                return bad(format!("dimension `{}` repeats a choice", d.key));
            }
        }
        Ok(())
    }

    pub fn dimension(&self, key: &str) -> Option<&Dimension> {
        self.dimensions.iter().find(|d| d.key == key)
    }

    /// `Ok` when the config sets exactly the declared keys to declared choices.
    pub fn check(&self, config: &Config) -> Result<(), String> {
        for d in &self.dimensions {
            match config.get(&d.key) {
                None => return Err(format!("missing dimension `{}`", d.key)),
                Some(v) if !d.choices.contains(v) => return Err(format!("`{}` = {v} is not a declared choice", d.key)),
                Some(_) => {}
            }
        }
        if let Some(extra) = config.keys().find(|k| self.dimension(k).is_none()) {
            return Err(format!("unknown dimension `{extra}`"));
        }
        Ok(())
    }

    /// First choice of every dimension.
    pub fn seed_config(&self) -> Config {
        self.dimensions.iter().map(|d| (d.key.clone(), d.choices[0].clone())).collect()
    }

    /// Number of configurations, saturating at `u128::MAX`.
    pub fn size(&self) -> u128 {
        self.dimensions
            .iter()
            .fold(1u128, |acc, d| acc.saturating_mul(d.choices.len() as u128))
    }

    /// Config at mixed-radix position `index`; the last dimension varies fastest.
    pub fn config_at(&self, mut index: u128) -> Config {
        let mut picks = vec![0usize; self.dimensions.len()];
        for (i, d) in self.dimensions.iter().enumerate().rev() {
            let k = d.choices.len() as u128;
            picks[i] = (index % k) as usize;
            index /= k;
        }
        self.dimensions
            .iter()
            .zip(picks)
            .map(|(d, p)| (d.key.clone(), d.choices[p].clone()))
            .collect()
    }

    /// Every configuration in [`ConfigSpace::config_at`] order.
    pub fn enumerate(&self) -> impl Iterator<Item = Config> + '_ {
        (0..self.size()).map(|i| self.config_at(i))
    }
}
