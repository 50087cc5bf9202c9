use std::collections::BTreeMap;

use thiserror::Error;

const DEFAULT_PEAKS: &str = include_str!("../../config/peaks.json");

#[derive(Debug, Error)]
pub enum PeakSpecError {
    #[error("invalid peak table: {0}")]
    Json(#[from] serde_json::Error),
    #[error("peak FLOP/s for `{0}` must be a positive finite number")]
    NonPositive(String),
}

/// Dense BF16 peak FLOP/s per device, keyed by hardware model string.
///
/// The shipped defaults live in `config/peaks.json`; pass a replacement file to
/// audit or correct them. Lookups ignore case and treat `-` and `_` alike.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakSpecTable {
    entries: BTreeMap<String, f64>,
}

impl Default for PeakSpecTable {
    fn default() -> Self {
        Self::from_json(DEFAULT_PEAKS).expect("shipped peak table is valid")
    }
}

impl PeakSpecTable {
    pub fn from_json(text: &str) -> Result<Self, PeakSpecError> {
        let raw: BTreeMap<String, f64> = serde_json::from_str(text)?;
        let mut entries = BTreeMap::new();
        for (k, v) in raw {
            if !(v.is_finite() && v > 0.0) {
                return Err(PeakSpecError::NonPositive(k));
            }
            entries.insert(normalize(&k), v);
        }
        Ok(PeakSpecTable { entries })
    }

    pub fn get(&self, model: &str) -> Option<f64> {
        self.entries.get(&normalize(model)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

fn normalize(model: &str) -> String {
    model.trim().to_ascii_lowercase().replace('-', "_")
}
