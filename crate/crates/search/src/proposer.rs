//! Configuration proposers.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::process::{Command, Stdio};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::{Config, ConfigSpace};
use crate::SearchTrial;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ProposerError(pub String);

pub trait Proposer {
    fn propose(&mut self, space: &ConfigSpace, history: &[SearchTrial]) -> Result<Config, ProposerError>;

    /// Called with the full history after every trial.
    fn update(&mut self, _history: &[SearchTrial]) {}
}

fn canonical(config: &Config) -> String {
    serde_json::to_string(config).expect("config serializes")
}

/// Latest score per config; `None` for configs whose trial failed.
fn scores(history: &[SearchTrial]) -> BTreeMap<String, Option<f64>> {
    history.iter().map(|t| (canonical(&t.config), t.score)).collect()
}

fn random_config(space: &ConfigSpace, rng: &mut ChaCha8Rng) -> Config {
    space
        .dimensions
        .iter()
        .map(|d| (d.key.clone(), d.choices[rng.gen_range(0..d.choices.len())].clone()))
        .collect()
}

/// Spaces up to this size are shuffled up front so sampling never repeats.
const ENUMERATE_LIMIT: u128 = 1 << 20;

/// Uniform sampling without replacement while unseen configs remain.
#[derive(Debug, Clone)]
pub struct RandomSearch {
    rng: ChaCha8Rng,
    order: Option<Vec<u128>>,
}

impl RandomSearch {
    pub fn new(seed: u64) -> Self {
        RandomSearch {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: None,
        }
    }
}

impl Proposer for RandomSearch {
    fn propose(&mut self, space: &ConfigSpace, history: &[SearchTrial]) -> Result<Config, ProposerError> {
        let seen = scores(history);
        if space.size() <= ENUMERATE_LIMIT {
            let rng = &mut self.rng;
            let order = self.order.get_or_insert_with(|| {
                let mut v: Vec<u128> = (0..space.size()).collect();
                v.shuffle(rng);
                v.reverse();
                v
            });
            while let Some(i) = order.pop() {
                let c = space.config_at(i);
                if !seen.contains_key(&canonical(&c)) {
                    return Ok(c);
                }
            }
            return Ok(random_config(space, &mut self.rng));
        }
        for _ in 0..1000 {
            let c = random_config(space, &mut self.rng);
            if !seen.contains_key(&canonical(&c)) {
                return Ok(c);
            }
        }
        Ok(random_config(space, &mut self.rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Start,
    Neighbor,
}

/// Coordinate-wise hill climbing.
///
/// Starting from the start config, each sweep visits the dimensions in a
/// seeded random order and tries every other value of one dimension at a time,
/// moving whenever a trial beats the incumbent. A sweep without any move is a
/// local optimum and triggers a restart from an unseen random config. Configs
/// already in the history are reused instead of re-proposed.
#[derive(Debug, Clone)]
pub struct CoordinateHillClimb {
    rng: ChaCha8Rng,
    start: Option<Config>,
    started: bool,
    incumbent: Option<(Config, f64)>,
    pending: VecDeque<Config>,
    dims_left: Vec<usize>,
    improved: bool,
    awaiting: Option<(Config, Role)>,
    restarts: usize,
}

impl CoordinateHillClimb {
    /// `start` defaults to the space's first choice per dimension.
    pub fn new(seed: u64, start: Option<Config>) -> Self {
        CoordinateHillClimb {
            rng: ChaCha8Rng::seed_from_u64(seed),
            start,
            started: false,
            incumbent: None,
            pending: VecDeque::new(),
            dims_left: Vec::new(),
            improved: false,
            awaiting: None,
            restarts: 0,
        }
    }

    pub fn restarts(&self) -> usize {
        self.restarts
    }

    fn begin_sweep(&mut self, space: &ConfigSpace) {
        self.dims_left = (0..space.dimensions.len())
            .filter(|&i| space.dimensions[i].choices.len() > 1)
            .collect();
        self.dims_left.shuffle(&mut self.rng);
        self.improved = false;
        self.pending.clear();
    }

    fn observe(&mut self, space: &ConfigSpace, config: Config, role: Role, score: Option<f64>) {
        match (role, score) {
            (Role::Start, Some(s)) => {
                self.incumbent = Some((config, s));
                self.begin_sweep(space);
            }
            (Role::Start, None) => self.incumbent = None,
            (Role::Neighbor, Some(s)) => {
                if self.incumbent.as_ref().is_some_and(|(_, best)| s > *best) {
                    self.incumbent = Some((config, s));
                    self.improved = true;
                }
            }
            (Role::Neighbor, None) => {}
        }
    }

    fn restart_point(&mut self, space: &ConfigSpace, seen: &BTreeMap<String, Option<f64>>) -> Option<Config> {
        if !self.started {
            self.started = true;
            return Some(self.start.clone().unwrap_or_else(|| space.seed_config()));
        }
        self.restarts += 1;
        if space.size() <= ENUMERATE_LIMIT {
            let mut unseen: Vec<u128> = (0..space.size())
                .filter(|&i| !seen.contains_key(&canonical(&space.config_at(i))))
                .collect();
            if unseen.is_empty() {
                return None;
            }
            unseen.shuffle(&mut self.rng);
            return Some(space.config_at(unseen[0]));
        }
        (0..1000)
            .map(|_| random_config(space, &mut self.rng))
            .find(|c| !seen.contains_key(&canonical(c)))
    }
}

impl Proposer for CoordinateHillClimb {
    fn propose(&mut self, space: &ConfigSpace, history: &[SearchTrial]) -> Result<Config, ProposerError> {
        let seen = scores(history);
        if let Some((c, role)) = self.awaiting.take() {
            let score = seen.get(&canonical(&c)).copied().flatten();
            self.observe(space, c, role, score);
        }
        loop {
            if self.incumbent.is_none() {
                let Some(c) = self.restart_point(space, &seen) else {
                    // Every config has been tried; keep proposing so the budget is honored.
                    return Ok(random_config(space, &mut self.rng));
                };
                match seen.get(&canonical(&c)) {
                    Some(&score) => {
                        self.observe(space, c, Role::Start, score);
                        continue;
                    }
                    None => {
                        self.awaiting = Some((c.clone(), Role::Start));
                        return Ok(c);
                    }
                }
            }
            if let Some(c) = self.pending.pop_front() {
                match seen.get(&canonical(&c)) {
                    Some(&score) => self.observe(space, c, Role::Neighbor, score),
                    None => {
                        self.awaiting = Some((c.clone(), Role::Neighbor));
                        return Ok(c);
                    }
                }
                continue;
            }
            if let Some(d) = self.dims_left.pop() {
                let (base, _) = self.incumbent.as_ref().expect("incumbent set");
                let dim = &space.dimensions[d];
                let mut moves: Vec<Config> = dim
                    .choices
                    .iter()
                    .filter(|v| base.get(&dim.key) != Some(v))
                    .map(|v| {
                        let mut c = base.clone();
                        c.insert(dim.key.clone(), v.clone());
                        c
                    })
                    .collect();
                moves.shuffle(&mut self.rng);
                self.pending = moves.into();
                continue;
            }
            if self.improved {
                self.begin_sweep(space);
            } else {
                self.incumbent = None;
            }
        }
    }
}

/// Delegates each proposal to a shell command.
///
/// The command receives `{"iteration", "space", "history"}` as one JSON line on
/// standard input and must print `{"config": {...}}` on standard output.
#[derive(Debug, Clone)]
pub struct ExternalCommand {
    pub command: String,
}

#[derive(Serialize)]
struct Request<'a> {
    iteration: usize,
    space: &'a ConfigSpace,
    history: &'a [SearchTrial],
}

#[derive(Deserialize)]
struct Response {
    config: Config,
}

impl ExternalCommand {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalCommand { command: command.into() }
    }
}

impl Proposer for ExternalCommand {
    fn propose(&mut self, space: &ConfigSpace, history: &[SearchTrial]) -> Result<Config, ProposerError> {
        let err = |m: String| ProposerError(format!("`{}`: {m}", self.command));
        let mut line = serde_json::to_string(&Request {
            iteration: history.len(),
            space,
            history,
        })
        .map_err(|e| err(e.to_string()))?;
        line.push('\n');
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| err(format!("cannot start: {e}")))?;
        let mut stdin = child.stdin.take().expect("stdin piped");
        let writer = std::thread::spawn(move || {
            // A command that ignores its input closes the pipe early; that is not an error.
            let _ = stdin.write_all(line.as_bytes());
        });
        let out = child.wait_with_output().map_err(|e| err(e.to_string()))?;
        let _ = writer.join();
        if !out.status.success() {
            let stderr = String::from_utf8_lossy(&out.stderr);
            return Err(err(format!("exited with {}: {}", out.status, stderr.trim())));
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        let resp: Response = serde_json::from_str(stdout.trim()).map_err(|e| err(format!("malformed response: {e}")))?;
        Ok(resp.config)
    }
}
