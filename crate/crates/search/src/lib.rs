//! Iterative configuration search: propose a config, execute it, score the
//! resulting profile, and feed the full history back to the proposer.

mod executor;
mod objective;
mod proposer;
mod space;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use traceval_core::metrics::PerformanceProfile;

pub use executor::{profile_from_values, Execution, Executor, Knob, SimExecutor, TableExecutor};
pub use objective::{composite_score, devices, Objective, Scored};
pub use proposer::{CoordinateHillClimb, ExternalCommand, Proposer, ProposerError, RandomSearch};
pub use space::{Config, ConfigSpace, DimType, Dimension};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid config space: {0}")]
    InvalidSpace(String),
    #[error("invalid objective: {0}")]
    InvalidObjective(String),
    #[error("invalid executor spec: {0}")]
    InvalidExecutor(String),
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("cannot write history: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum FailureReason {
    InvalidConfig(String),
    Unmeasured,
    Oom,
    Proposer(String),
    Executor(String),
    Scoring(String),
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FailureReason::InvalidConfig(m) => write!(f, "invalid config: {m}"),
            FailureReason::Unmeasured => f.write_str("unmeasured config"),
            FailureReason::Oom => f.write_str("out of memory"),
            FailureReason::Proposer(m) => write!(f, "proposer failed: {m}"),
            FailureReason::Executor(m) => write!(f, "executor failed: {m}"),
            FailureReason::Scoring(m) => write!(f, "scoring failed: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Succeeded {
        profile: PerformanceProfile,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        entry_paths: Vec<String>,
    },
    Failed {
        reason: FailureReason,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrial {
    pub iteration: usize,
    pub config: Config,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// Raw objective quantity: the minimized metric, or step time for composite scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub devices: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl SearchTrial {
    pub fn succeeded(&self) -> bool {
        matches!(self.outcome, Outcome::Succeeded { .. })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchHistory {
    pub trials: Vec<SearchTrial>,
}

impl SearchHistory {
    /// Highest-scoring trial; the earliest wins ties.
    pub fn best(&self) -> Option<&SearchTrial> {
        self.trials
            .iter()
            .filter_map(|t| t.score.map(|s| (s, t)))
            .fold(None, |acc: Option<(f64, &SearchTrial)>, (s, t)| match acc {
                Some((b, _)) if b >= s => acc,
                _ => Some((s, t)),
            })
            .map(|(_, t)| t)
    }

    /// Best score seen up to and including each iteration.
    pub fn running_best(&self) -> Vec<Option<f64>> {
        let mut best: Option<f64> = None;
        self.trials
            .iter()
            .map(|t| {
                if let Some(s) = t.score {
                    best = Some(best.map_or(s, |b| b.max(s)));
                }
                best
            })
            .collect()
    }

    /// Succeeded trials not dominated in (step time, devices), both minimized.
    /// Only trials scored by a composite objective carry a device count.
    pub fn pareto(&self) -> Vec<&SearchTrial> {
        let points: Vec<(&SearchTrial, f64, f64)> = self
            .trials
            .iter()
            .filter_map(|t| Some((t, t.value?, t.devices?)))
            .filter(|(t, _, _)| t.score.is_some())
            .collect();
        let mut front: Vec<&SearchTrial> = Vec::new();
        for &(t, time, n) in &points {
            let dominated = points
                .iter()
                .any(|&(_, t2, n2)| t2 <= time && n2 <= n && (t2 < time || n2 < n));
            let duplicate = front.iter().any(|f| f.value == Some(time) && f.devices == Some(n));
            if !dominated && !duplicate {
                front.push(t);
            }
        }
        front.sort_by(|a, b| a.devices.partial_cmp(&b.devices).unwrap().then(a.iteration.cmp(&b.iteration)));
        front
    }

    pub fn to_jsonl(&self) -> String {
        self.trials.iter().map(trial_line).collect()
    }

    pub fn from_jsonl(text: &str) -> serde_json::Result<Self> {
        let trials = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(SearchHistory { trials })
    }
}

fn trial_line(t: &SearchTrial) -> String {
    let mut s = serde_json::to_string(t).expect("trial serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    pub budget: usize,
    /// Off by default so that seeded runs produce byte-identical histories.
    pub record_wall_time: bool,
}

impl SearchOptions {
    pub fn new(budget: usize) -> Self {
        SearchOptions {
            budget,
            record_wall_time: false,
        }
    }
}

/// Runs exactly `opts.budget` trials. Each trial is appended to `sink` as one
/// JSON line and flushed before the next proposal.
pub fn run_search(
    space: &ConfigSpace,
    objective: &Objective,
    proposer: &mut dyn Proposer,
    executor: &mut dyn Executor,
    opts: SearchOptions,
    mut sink: Option<&mut dyn Write>,
) -> Result<SearchHistory, SearchError> {
    if opts.budget == 0 {
        return Err(SearchError::ZeroBudget);
    }
    space.validate()?;
    objective.validate()?;
    let mut history = SearchHistory::default();
    for iteration in 0..opts.budget {
        let started = Instant::now();
        let (config, result) = match proposer.propose(space, &history.trials) {
            Err(e) => (Config::new(), Err(FailureReason::Proposer(e.0))),
            Ok(config) => match space.check(&config) {
                Err(m) => (config, Err(FailureReason::InvalidConfig(m))),
                Ok(()) => {
                    let r = executor.execute(&config);
                    (config, r)
                }
            },
        };
        let mut trial = SearchTrial {
            iteration,
            config,
            outcome: Outcome::Failed {
                reason: FailureReason::Unmeasured,
            },
            score: None,
            value: None,
            devices: None,
            wall_time_s: None,
        };
        match result {
            Err(reason) => trial.outcome = Outcome::Failed { reason },
            Ok(exec) => match objective.score(&trial.config, &exec.profile) {
                Err(m) => trial.outcome = Outcome::Failed { reason: FailureReason::Scoring(m) },
                Ok(s) => {
                    trial.score = Some(s.score);
                    trial.value = Some(s.value);
                    trial.devices = s.devices;
                    trial.outcome = Outcome::Succeeded {
                        profile: exec.profile,
                        entry_paths: exec.entry_paths,
                    };
                }
            },
        }
        if opts.record_wall_time {
            trial.wall_time_s = Some(started.elapsed().as_secs_f64());
        }
        if let Some(w) = sink.as_deref_mut() {
            w.write_all(trial_line(&trial).as_bytes())?;
            w.flush()?;
        }
        history.trials.push(trial);
        proposer.update(&history.trials);
    }
    Ok(history)
}
