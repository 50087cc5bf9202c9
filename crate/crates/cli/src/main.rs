//! `traceval`: validate submissions, compute metrics, compare entries, run
//! what-if network analysis and configuration searches from the shell.

mod entry;
mod table;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use traceval_core::card::{parse_card, validate_submission, PeakSpecTable, Severity, ValidationOptions, WorkloadCard};
use traceval_core::metrics::{run_suite, Direction, MetricContext, MetricOptions, PerformanceProfile, Registry};
use traceval_core::trace::{load_trace, DialectChoice, NormalizedTrace, PatternConfig};
use traceval_search::{
    run_search, Config, ConfigSpace, CoordinateHillClimb, Executor, ExternalCommand, Knob, Objective, Outcome,
    Proposer, RandomSearch, SearchOptions, SearchTrial, SimExecutor, TableExecutor,
};
use traceval_whatif::{
    build_graph, replay, utility, BuildOptions, ExecutionGraph, NetworkConfig, ReplayMode, Resource,
};

use table::{num, Table};

#[derive(Parser)]
#[command(name = "traceval", version, about = "Trace-based benchmarking for distributed LLM workloads")]
struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// JSON file overriding the built-in event classification patterns.
    #[arg(long, global = true)]
    patterns: Option<PathBuf>,
    /// JSON file overriding the built-in accelerator peak FLOP/s table.
    #[arg(long, global = true)]
    peaks: Option<PathBuf>,
    /// Downgrade step-count validation errors to warnings.
    #[arg(long, global = true)]
    relaxed: bool,
    /// Seed for the built-in search proposers.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Trace dialect: auto, kineto or xla.
    #[arg(long, global = true, default_value = "auto", value_parser = parse_dialect)]
    dialect: DialectChoice,
    #[command(subcommand)]
    cmd: Cmd,
}

fn parse_dialect(s: &str) -> Result<DialectChoice, String> {
    s.parse()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Args)]
struct Inputs {
    /// Workload card (YAML).
    #[arg(long)]
    card: PathBuf,
    /// Trace files or directories of trace files, one file per rank.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
}

#[derive(Args)]
struct NetArgs {
    /// Network description (JSON); defaults to one derived from the card.
    #[arg(long)]
    net: Option<PathBuf>,
    /// Scale-up bandwidth override, GB/s.
    #[arg(long)]
    scale_up_bw: Option<f64>,
    /// Scale-out bandwidth override, GB/s.
    #[arg(long)]
    scale_out_bw: Option<f64>,
    /// Scale-up domain size override.
    #[arg(long)]
    scale_up_domain: Option<usize>,
    /// Scale-up latency override, seconds.
    #[arg(long)]
    scale_up_latency: Option<f64>,
    /// Scale-out latency override, seconds.
    #[arg(long)]
    scale_out_latency: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProposerKind {
    Random,
    Hill,
    External,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a card and its traces against the submission rules.
    Validate(Inputs),
    /// Run the metric suite and print a performance profile.
    Metrics {
        #[command(flatten)]
        inputs: Inputs,
        /// Comma-separated metric keys to run.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        /// Exclude the first and last step window from steady-state metrics.
        #[arg(long)]
        drop_edge_steps: bool,
    },
    /// Align two profiles (or benchmark entries) metric by metric.
    Compare { a: PathBuf, b: PathBuf },
    /// Estimate the step-time gain from doubling network resources.
    Whatif {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        net: NetArgs,
        /// scale-out-bw, scale-up-bw or scale-up-domain; repeatable. Defaults to all three.
        #[arg(long = "resource")]
        resources: Vec<Resource>,
        /// Step window to convert; defaults to the middle steady-state window.
        #[arg(long)]
        step: Option<usize>,
        /// Largest tolerated fraction of collectives without a byte count.
        #[arg(long, default_value_t = 0.1)]
        max_unsized: f64,
    },
    /// Write the execution graph of one step as JSON.
    ExportGraph {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        step: Option<usize>,
        /// Output file; standard output when omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Search a configuration space.
    Search {
        /// Config space (JSON or YAML).
        #[arg(long)]
        space: PathBuf,
        /// Objective (JSON or YAML).
        #[arg(long)]
        objective: PathBuf,
        #[arg(long, value_enum, default_value_t = ProposerKind::Hill)]
        proposer: ProposerKind,
        /// Shell command for `--proposer external`.
        #[arg(long)]
        command: Option<String>,
        /// Start config for the hill climber, as a JSON object.
        #[arg(long)]
        start: Option<String>,
        /// Recorded-results executor file.
        #[arg(long, conflicts_with = "sim")]
        table: Option<PathBuf>,
        /// Simulation executor spec.
        #[arg(long)]
        sim: Option<PathBuf>,
        /// Number of trials.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        budget: u64,
        /// Append-only JSONL history file.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Record per-trial wall time (makes histories differ between runs).
        #[arg(long)]
        wall_time: bool,
    },
    /// Package or verify a benchmark entry.
    PackageEntry {
        /// Verify an existing entry manifest instead of packaging.
        #[arg(long, conflicts_with_all = ["card", "out"])]
        verify: Option<PathBuf>,
        #[arg(long)]
        card: Option<PathBuf>,
        /// Run script to record; repeatable.
        #[arg(long = "script")]
        scripts: Vec<PathBuf>,
        /// Directory receiving entry.json and profile.json.
        #[arg(long)]
        out: Option<PathBuf>,
        traces: Vec<PathBuf>,
    },
}

/// Rendered command result.
struct Output {
    text: String,
    code: u8,
}

impl Output {
    fn ok(text: String) -> Self {
        Output { text, code: 0 }
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable output");
    s.push('\n');
    s
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

struct Env {
    format: Format,
    patterns: PatternConfig,
    peaks: PeakSpecTable,
    relaxed: bool,
    seed: u64,
    dialect: DialectChoice,
}

impl Env {
    fn new(cli: &Cli) -> Result<Self> {
        let patterns = match &cli.patterns {
            Some(p) => PatternConfig::from_json(&read(p)?).with_context(|| format!("invalid patterns file {}", p.display()))?,
            None => PatternConfig::default(),
        };
        let peaks = match &cli.peaks {
            Some(p) => PeakSpecTable::from_json(&read(p)?).with_context(|| format!("invalid peaks file {}", p.display()))?,
            None => PeakSpecTable::default(),
        };
        Ok(Env {
            format: cli.format,
            patterns,
            peaks,
            relaxed: cli.relaxed,
            seed: cli.seed,
            dialect: cli.dialect,
        })
    }

    fn render<T: Serialize>(&self, value: &T, table: impl FnOnce() -> String) -> String {
        match self.format {
            Format::Json => pretty(value),
            Format::Table => table(),
        }
    }

    fn load(&self, inputs: &Inputs) -> Result<(WorkloadCard, NormalizedTrace)> {
        let card = parse_card(&read(&inputs.card)?).with_context(|| format!("invalid card {}", inputs.card.display()))?;
        let files = expand(&inputs.traces)?;
        let trace = load_trace(&files, self.dialect, &self.patterns)?;
        Ok((card, trace))
    }

    fn profile(&self, inputs: &Inputs, only: &[String], drop_edge_steps: bool) -> Result<PerformanceProfile> {
        let (card, trace) = self.load(inputs)?;
        let mut registry = Registry::catalog();
        if !only.is_empty() {
            if let Some(k) = only.iter().find(|k| registry.get(k).is_none()) {
                bail!("unknown metric `{k}`; known: {}", registry.keys().join(", "));
            }
            let keys: Vec<&str> = only.iter().map(String::as_str).collect();
            registry.retain_keys(&keys);
        }
        let ctx = MetricContext::new(&card, &trace, &self.peaks, &self.patterns, MetricOptions { drop_edge_steps });
        let mut profile = run_suite(&ctx, &registry)?;
        profile.workload_card_ref = Some(inputs.card.display().to_string());
        Ok(profile)
    }
}

/// Directories expand to the trace files they contain.
fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("cannot list {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    let name = f.file_name().and_then(|n| n.to_str()).unwrap_or("");
                    f.is_file() && (name.ends_with(".json") || name.ends_with(".json.gz"))
                })
                .collect();
            if inner.is_empty() {
                bail!("{} contains no .json or .json.gz traces", p.display());
            }
            inner.sort();
            out.extend(inner);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn cmd_validate(env: &Env, inputs: &Inputs) -> Result<Output> {
    let (card, trace) = env.load(inputs)?;
    let report = validate_submission(&card, &trace, ValidationOptions { relaxed: env.relaxed });
    let text = env.render(&report, || {
        let mut t = Table::new(["rule", "severity", "message"]);
        for f in &report.findings {
            let sev = match f.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            t.row([f.rule.as_str(), sev, f.message.as_str()]);
        }
        let verdict = if report.passed { "passed" } else { "failed" };
        let mut s = format!(
            "validation {verdict}: {} errors, {} warnings\n",
            report.error_count(),
            report.warning_count()
        );
        if !t.is_empty() {
            s.push_str(&t.render());
        }
        s
    });
    Ok(Output {
        text,
        code: if report.passed { 0 } else { 1 },
    })
}

fn direction_name(d: Direction) -> &'static str {
    match d {
        Direction::HigherBetter => "higher",
        Direction::LowerBetter => "lower",
    }
}

fn cmd_metrics(env: &Env, inputs: &Inputs, only: &[String], drop_edge_steps: bool) -> Result<Output> {
    let profile = env.profile(inputs, only, drop_edge_steps)?;
    let text = match env.format {
        Format::Json => profile.to_json(),
        Format::Table => {
            let mut t = Table::new(["metric", "value", "unit", "better"]);
            for m in &profile.metrics {
                t.row([m.key.clone(), num(m.value), m.unit.clone(), direction_name(m.direction).to_string()]);
            }
            let mut s = t.render();
            if !profile.skipped.is_empty() {
                let mut k = Table::new(["skipped", "reason"]);
                for x in &profile.skipped {
                    k.row([x.key.as_str(), x.reason.as_str()]);
                }
                s.push('\n');
                s.push_str(&k.render());
            }
            s
        }
    };
    Ok(Output::ok(text))
}

#[derive(Serialize)]
struct CompareRow {
    key: String,
    unit: String,
    direction: Direction,
    a: f64,
    b: f64,
    /// `b − a`.
    delta: f64,
    /// `delta / |a| × 100`; absent when `a` is zero.
    change_percent: Option<f64>,
    /// Change oriented so that positive means `b` is better.
    improvement_percent: Option<f64>,
    verdict: &'static str,
}

#[derive(Serialize)]
struct Comparison {
    a: String,
    b: String,
    rows: Vec<CompareRow>,
    only_in_a: Vec<String>,
    only_in_b: Vec<String>,
}

fn load_profile(path: &Path) -> Result<PerformanceProfile> {
    let text = read(path)?;
    let doc: Value = serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
    if doc.get("card").is_some() && doc.get("profile").is_some() {
        let target = entry::profile_path(path)?;
        return PerformanceProfile::from_json(&read(&target)?)
            .with_context(|| format!("{} is not a performance profile", target.display()));
    }
    PerformanceProfile::from_json(&text).with_context(|| format!("{} is not a performance profile", path.display()))
}

fn compare(a_name: &str, a: &PerformanceProfile, b_name: &str, b: &PerformanceProfile) -> Comparison {
    let mut rows = Vec::new();
    let mut only_in_a = Vec::new();
    for m in &a.metrics {
        let Some(other) = b.get(&m.key) else {
            only_in_a.push(m.key.clone());
            continue;
        };
        let delta = other.value - m.value;
        let change = (m.value != 0.0).then(|| delta / m.value.abs() * 100.0);
        let improvement = change.map(|c| match m.direction {
            Direction::HigherBetter => c,
            Direction::LowerBetter => -c,
        });
        let b_better = match m.direction {
            Direction::HigherBetter => other.value > m.value,
            Direction::LowerBetter => other.value < m.value,
        };
        let verdict = if delta == 0.0 {
            "same"
        } else if b_better {
            "b_better"
        } else {
            "a_better"
        };
        rows.push(CompareRow {
            key: m.key.clone(),
            unit: m.unit.clone(),
            direction: m.direction,
            a: m.value,
            b: other.value,
            delta,
            change_percent: change,
            improvement_percent: improvement,
            verdict,
        });
    }
    let only_in_b = b
        .metrics
        .iter()
        .filter(|m| a.get(&m.key).is_none())
        .map(|m| m.key.clone())
        .collect();
    Comparison {
        a: a_name.to_string(),
        b: b_name.to_string(),
        rows,
        only_in_a,
        only_in_b,
    }
}

fn cmd_compare(env: &Env, a: &Path, b: &Path) -> Result<Output> {
    let pa = load_profile(a)?;
    let pb = load_profile(b)?;
    let c = compare(&a.display().to_string(), &pa, &b.display().to_string(), &pb);
    let text = env.render(&c, || {
        let mut t = Table::new(["metric", "a", "b", "delta", "change %", "verdict"]);
        for r in &c.rows {
            let pct = r.change_percent.map_or("-".to_string(), num);
            t.row([r.key.clone(), num(r.a), num(r.b), num(r.delta), pct, r.verdict.to_string()]);
        }
        let mut s = t.render();
        for (label, keys) in [("only in a", &c.only_in_a), ("only in b", &c.only_in_b)] {
            if !keys.is_empty() {
                s.push_str(&format!("{label}: {}\n", keys.join(", ")));
            }
        }
        s
    });
    Ok(Output::ok(text))
}

fn network(card: &WorkloadCard, args: &NetArgs) -> Result<NetworkConfig> {
    let mut net = match &args.net {
        Some(p) => NetworkConfig::from_json(&read(p)?).with_context(|| format!("invalid network file {}", p.display()))?,
        None => NetworkConfig::from_card(card).context("no --net given and the card does not describe the network")?,
    };
    if let Some(v) = args.scale_up_bw {
        net.scale_up_bandwidth = v;
    }
    if let Some(v) = args.scale_out_bw {
        net.scale_out_bandwidth = v;
    }
    if let Some(v) = args.scale_up_domain {
        net.scale_up_domain_size = v;
    }
    if let Some(v) = args.scale_up_latency {
        net.scale_up_latency = v;
    }
    if let Some(v) = args.scale_out_latency {
        net.scale_out_latency = v;
    }
    net.validate()?;
    Ok(net)
}

#[derive(Serialize)]
struct GraphSummary {
    ranks: usize,
    nodes: usize,
    groups: usize,
    collectives: usize,
    unsized_collectives: usize,
}

fn summarize(g: &ExecutionGraph) -> GraphSummary {
    GraphSummary {
        ranks: g.ranks.len(),
        nodes: g.node_count(),
        groups: g.groups.len(),
        collectives: g.total_collectives,
        unsized_collectives: g.unsized_collectives,
    }
}

#[derive(Serialize)]
struct WhatIfReport {
    step: Option<usize>,
    network: NetworkConfig,
    graph: GraphSummary,
    /// Measured-mode replay of the unmodified graph, seconds.
    measured_step_time: f64,
    results: Vec<traceval_whatif::WhatIfResult>,
}

fn cmd_whatif(
    env: &Env,
    inputs: &Inputs,
    args: &NetArgs,
    resources: &[Resource],
    step: Option<usize>,
    max_unsized: f64,
) -> Result<Output> {
    if !(0.0..=1.0).contains(&max_unsized) {
        bail!("--max-unsized must be within [0, 1]");
    }
    let (card, trace) = env.load(inputs)?;
    let net = network(&card, args)?;
    let graph = build_graph(&trace, &card, BuildOptions { step })?;
    if graph.total_collectives > 0 {
        let frac = graph.unsized_collectives as f64 / graph.total_collectives as f64;
        if frac > max_unsized {
            bail!(
                "{} of {} collectives in the step carry no byte count ({:.1}% > {:.1}% allowed); \
                 they would be replayed as fixed-duration compute and hide network effects. \
                 Raise --max-unsized to proceed anyway",
                graph.unsized_collectives,
                graph.total_collectives,
                frac * 100.0,
                max_unsized * 100.0
            );
        }
    }
    let measured = replay(&graph, &net, ReplayMode::Measured)?;
    let wanted: Vec<Resource> = if resources.is_empty() { Resource::ALL.to_vec() } else { resources.to_vec() };
    let results = wanted
        .iter()
        .map(|r| utility(&graph, &net, *r))
        .collect::<Result<Vec<_>, _>>()?;
    let report = WhatIfReport {
        step,
        network: net,
        graph: summarize(&graph),
        measured_step_time: measured.step_time,
        results,
    };
    let text = env.render(&report, || {
        let mut t = Table::new(["resource", "baseline s", "doubled s", "utility %"]);
        for r in &report.results {
            t.row([r.resource.slug().to_string(), num(r.baseline_step_time), num(r.simulated_step_time), num(r.utility)]);
        }
        format!("measured step time: {} s\n{}", num(report.measured_step_time), t.render())
    });
    Ok(Output::ok(text))
}

fn cmd_export_graph(env: &Env, inputs: &Inputs, step: Option<usize>, output: Option<&Path>) -> Result<Output> {
    let (card, trace) = env.load(inputs)?;
    let graph = build_graph(&trace, &card, BuildOptions { step })?;
    let doc = graph.to_json();
    if let Some(path) = output {
        fs::write(path, &doc).with_context(|| format!("cannot write {}", path.display()))?;
    }
    let text = match (env.format, output) {
        (Format::Json, None) => doc,
        (Format::Json, Some(_)) => pretty(&summarize(&graph)),
        (Format::Table, _) => {
            let mut t = Table::new(["rank", "nodes", "edges", "step ns"]);
            for r in &graph.ranks {
                t.row([r.rank.to_string(), r.nodes.len().to_string(), r.edges.len().to_string(), r.step_ns.to_string()]);
            }
            t.render()
        }
    };
    Ok(Output::ok(text))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimSpec {
    /// Graph file, relative to the simulation file.
    graph: PathBuf,
    network: NetworkConfig,
    #[serde(default)]
    knobs: BTreeMap<String, Knob>,
}

fn sim_executor(path: &Path) -> Result<SimExecutor> {
    let spec: SimSpec =
        serde_json::from_str(&read(path)?).with_context(|| format!("invalid simulation spec {}", path.display()))?;
    spec.network.validate()?;
    let graph_path = path.parent().unwrap_or(Path::new(".")).join(&spec.graph);
    let graph = ExecutionGraph::from_json(&read(&graph_path)?)?;
    Ok(SimExecutor::new(graph, spec.network, spec.knobs))
}

fn config_text(c: &Config) -> String {
    c.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
}

fn trial_summary(t: &SearchTrial) -> Value {
    json!({
        "iteration": t.iteration,
        "config": t.config,
        "score": t.score,
        "value": t.value,
        "devices": t.devices,
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_search(
    env: &Env,
    space: &Path,
    objective: &Path,
    proposer: ProposerKind,
    command: Option<&str>,
    start: Option<&str>,
    table: Option<&Path>,
    sim: Option<&Path>,
    budget: u64,
    history: Option<&Path>,
    wall_time: bool,
) -> Result<Output> {
    let space = ConfigSpace::parse(&read(space)?)?;
    let objective = Objective::parse(&read(objective)?)?;
    let mut executor: Box<dyn Executor> = match (table, sim) {
        (Some(t), None) => Box::new(TableExecutor::parse(&read(t)?)?),
        (None, Some(s)) => Box::new(sim_executor(s)?),
        _ => bail!("exactly one of --table or --sim is required"),
    };
    let start: Option<Config> = start
        .map(|s| serde_json::from_str(s).context("--start must be a JSON object"))
        .transpose()?;
    if let Some(c) = &start {
        space.check(c).map_err(|m| anyhow!("--start: {m}"))?;
    }
    let mut proposer: Box<dyn Proposer> = match proposer {
        ProposerKind::Random => Box::new(RandomSearch::new(env.seed)),
        ProposerKind::Hill => Box::new(CoordinateHillClimb::new(env.seed, start)),
        ProposerKind::External => {
            let cmd = command.ok_or_else(|| anyhow!("--proposer external needs --command"))?;
            Box::new(ExternalCommand::new(cmd))
        }
    };
    let mut sink: Option<BufWriter<fs::File>> = match history {
        Some(p) => Some(BufWriter::new(
            fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => None,
    };
    let opts = SearchOptions {
        budget: budget as usize,
        record_wall_time: wall_time,
    };
    let h = run_search(
        &space,
        &objective,
        proposer.as_mut(),
        executor.as_mut(),
        opts,
        sink.as_mut().map(|w| w as &mut dyn Write),
    )?;
    let succeeded = h.trials.iter().filter(|t| t.succeeded()).count();
    let mut summary = json!({
        "trials": h.trials.len(),
        "succeeded": succeeded,
        "failed": h.trials.len() - succeeded,
        "objective": objective,
        "best": h.best().map(trial_summary),
    });
    if matches!(objective, Objective::Composite { .. }) {
        summary["pareto"] = Value::Array(h.pareto().into_iter().map(trial_summary).collect());
    }
    let text = env.render(&summary, || {
        let mut t = Table::new(["iter", "config", "status", "value", "score"]);
        for tr in &h.trials {
            let status = match &tr.outcome {
                Outcome::Succeeded { .. } => "ok".to_string(),
                Outcome::Failed { reason } => reason.to_string(),
            };
            t.row([
                tr.iteration.to_string(),
                config_text(&tr.config),
                status,
                tr.value.map_or("-".into(), num),
                tr.score.map_or("-".into(), num),
            ]);
        }
        let mut s = t.render();
        match h.best() {
            Some(b) => s.push_str(&format!(
                "best: iteration {} [{}] score {}\n",
                b.iteration,
                config_text(&b.config),
                num(b.score.unwrap_or(f64::NAN))
            )),
            None => s.push_str("best: none (no trial succeeded)\n"),
        }
        if matches!(objective, Objective::Composite { .. }) {
            for p in h.pareto() {
                s.push_str(&format!(
                    "pareto: devices {} step {} s [{}]\n",
                    num(p.devices.unwrap_or(f64::NAN)),
                    num(p.value.unwrap_or(f64::NAN)),
                    config_text(&p.config)
                ));
            }
        }
        s
    });
    Ok(Output::ok(text))
}

fn cmd_package(
    env: &Env,
    verify: Option<&Path>,
    card: Option<&Path>,
    scripts: &[PathBuf],
    out: Option<&Path>,
    traces: &[PathBuf],
) -> Result<Output> {
    if let Some(path) = verify {
        let report = entry::verify(path)?;
        let text = env.render(&report, || {
            let mut s = format!("{}: {} files checked, {}\n", report.entry, report.checked, if report.ok { "ok" } else { "MISMATCH" });
            for p in &report.problems {
                s.push_str(&format!("  {p}\n"));
            }
            s
        });
        return Ok(Output {
            text,
            code: if report.ok { 0 } else { 1 },
        });
    }
    let card = card.ok_or_else(|| anyhow!("--card is required when packaging"))?;
    let out = out.ok_or_else(|| anyhow!("--out is required when packaging"))?;
    if traces.is_empty() {
        bail!("at least one trace is required when packaging");
    }
    let inputs = Inputs {
        card: card.to_path_buf(),
        traces: traces.to_vec(),
    };
    let profile = env.profile(&inputs, &[], false)?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let profile_path = out.join("profile.json");
    fs::write(&profile_path, profile.to_json()).with_context(|| format!("cannot write {}", profile_path.display()))?;
    let e = entry::BenchmarkEntry {
        card: entry::file_ref(card)?,
        traces: expand(traces)?.iter().map(|p| entry::file_ref(p)).collect::<Result<_>>()?,
        scripts: scripts.iter().map(|p| entry::file_ref(p)).collect::<Result<_>>()?,
        profile: entry::FileRef {
            path: "profile.json".into(),
            sha256: entry::sha256_file(&profile_path)?,
        },
    };
    let entry_path = out.join("entry.json");
    fs::write(&entry_path, pretty(&e)).with_context(|| format!("cannot write {}", entry_path.display()))?;
    let text = env.render(&e, || {
        let mut t = Table::new(["role", "path", "sha256"]);
        t.row(["card", e.card.path.as_str(), e.card.sha256.as_str()]);
        for f in &e.traces {
            t.row(["trace", f.path.as_str(), f.sha256.as_str()]);
        }
        for f in &e.scripts {
            t.row(["script", f.path.as_str(), f.sha256.as_str()]);
        }
        t.row(["profile", e.profile.path.as_str(), e.profile.sha256.as_str()]);
        t.render()
    });
    Ok(Output::ok(text))
}

fn run(cli: &Cli) -> Result<Output> {
    let env = Env::new(cli)?;
    match &cli.cmd {
        Cmd::Validate(inputs) => cmd_validate(&env, inputs),
        Cmd::Metrics {
            inputs,
            only,
            drop_edge_steps,
        } => cmd_metrics(&env, inputs, only, *drop_edge_steps),
        Cmd::Compare { a, b } => cmd_compare(&env, a, b),
        Cmd::Whatif {
            inputs,
            net,
            resources,
            step,
            max_unsized,
        } => cmd_whatif(&env, inputs, net, resources, *step, *max_unsized),
        Cmd::ExportGraph { inputs, step, output } => cmd_export_graph(&env, inputs, *step, output.as_deref()),
        Cmd::Search {
            space,
            objective,
            proposer,
            command,
            start,
            table,
            sim,
            budget,
            history,
            wall_time,
        } => cmd_search(
            &env,
            space,
            objective,
            *proposer,
            command.as_deref(),
            start.as_deref(),
            table.as_deref(),
            sim.as_deref(),
            *budget,
            history.as_deref(),
            *wall_time,
        ),
        Cmd::PackageEntry {
            verify,
            card,
            scripts,
            out,
            traces,
        } => cmd_package(&env, verify.as_deref(), card.as_deref(), scripts, out.as_deref(), traces),
    }
}

const EXIT_INPUT: u8 = 1;
const EXIT_INTERNAL: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_INPUT),
            };
        }
    };
    let outcome = std::panic::catch_unwind(|| run(&cli));
    match outcome {
        Ok(Ok(out)) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(out.text.as_bytes()).and_then(|_| stdout.flush()).is_err() {
                return ExitCode::from(EXIT_INTERNAL);
            }
            ExitCode::from(out.code)
        }
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(_) => {
            eprintln!("error: internal failure");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}
