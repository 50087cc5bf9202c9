use std::collections::BTreeMap;
use std::path::PathBuf;

use proptest::prelude::*;
use serde_json::{json, Value};
use traceval_core::trace::Dialect;
use traceval_search::{
    composite_score, profile_from_values, run_search, Config, ConfigSpace, CoordinateHillClimb, Execution, Executor,
    ExternalCommand, FailureReason, Objective, Outcome, Proposer, RandomSearch, SearchError, SearchHistory,
    SearchOptions, SearchTrial, TableExecutor,
};

fn fixture(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/search").join(name);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn step_time() -> Objective {
    Objective::MinimizeMetric {
        key: "avg_step_time".into(),
    }
}

fn ok(t: f64) -> Result<Execution, FailureReason> {
    let values = BTreeMap::from([("avg_step_time".to_string(), t)]);
    Ok(Execution {
        profile: profile_from_values(Dialect::KinetoGpu, &values),
        entry_paths: Vec::new(),
    })
}

fn step_of(r: Result<Execution, FailureReason>) -> f64 {
    r.unwrap().profile.value("avg_step_time").unwrap()
}

fn cfg(pairs: &[(&str, Value)]) -> Config {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn search(
    space: &ConfigSpace,
    objective: &Objective,
    proposer: &mut dyn Proposer,
    executor: &mut dyn Executor,
    budget: usize,
) -> SearchHistory {
    run_search(space, objective, proposer, executor, SearchOptions::new(budget), None).unwrap()
}

#[test]
fn single_trial() {
    let space = ConfigSpace::parse("dimensions: [{key: tp, type: int, choices: [1]}]").unwrap();
    let mut exec = |_: &Config| ok(2.0);
    let h = search(&space, &step_time(), &mut RandomSearch::new(0), &mut exec, 1);
    assert_eq!(h.trials.len(), 1);
    assert_eq!(h.trials[0].score, Some(-2.0));
    assert_eq!(h.trials[0].value, Some(2.0));
    assert_eq!(h.best().unwrap().iteration, 0);
}

#[test]
fn zero_budget_rejected() {
    let space = ConfigSpace::parse("dimensions: [{key: tp, type: int, choices: [1]}]").unwrap();
    let mut exec = |_: &Config| ok(1.0);
    let r = run_search(&space, &step_time(), &mut RandomSearch::new(0), &mut exec, SearchOptions::new(0), None);
    assert!(matches!(r, Err(SearchError::ZeroBudget)));
}

fn megatron() -> TableExecutor {
    TableExecutor::parse(&fixture("megatron_table.json")).unwrap()
}

fn torchtitan() -> TableExecutor {
    TableExecutor::parse(&fixture("torchtitan_table.json")).unwrap()
}

fn layout(t: &SearchTrial) -> (i64, i64, i64) {
    let g = |k: &str| t.config[k].as_i64().unwrap();
    (g("tp"), g("dp"), g("pp"))
}

#[test]
fn exhaustive_table_search_finds_recorded_optima() {
    let space = ConfigSpace::parse(&fixture("space.json")).unwrap();
    let budget = space.size() as usize;
    let h = search(&space, &step_time(), &mut RandomSearch::new(7), &mut megatron(), budget);
    let distinct: std::collections::BTreeSet<String> =
        h.trials.iter().map(|t| serde_json::to_string(&t.config).unwrap()).collect();
    assert_eq!(distinct.len(), budget);
    let best = h.best().unwrap();
    assert_eq!(layout(best), (4, 1, 4));
    assert_eq!(best.value, Some(0.44));

    let h = search(&space, &step_time(), &mut RandomSearch::new(7), &mut torchtitan(), budget);
    let best = h.best().unwrap();
    assert_eq!(layout(best), (1, 4, 4));
    assert_eq!(best.value, Some(1.5));

    // The other engine's optimum does not transfer.
    assert_eq!(step_of(megatron().execute(&best.config)), 1.3);
}

#[test]
fn oom_and_unmeasured_are_failed_trials() {
    let mut t = megatron();
    let oom = cfg(&[
        ("tp", json!(1)),
        ("dp", json!(4)),
        ("pp", json!(4)),
        ("micro_batch", json!(2)),
        ("act_ckpt", json!(false)),
    ]);
    assert_eq!(t.execute(&oom), Err(FailureReason::Oom));
    let mut off = oom.clone();
    off.insert("dp".into(), json!(1));
    assert_eq!(t.execute(&off), Err(FailureReason::Unmeasured));

    let space = ConfigSpace::parse(&fixture("space.json")).unwrap();
    let h = search(&space, &step_time(), &mut RandomSearch::new(1), &mut megatron(), 40);
    assert_eq!(h.trials.len(), 40);
    for (i, tr) in h.trials.iter().enumerate() {
        assert_eq!(tr.iteration, i);
        assert_eq!(tr.succeeded(), tr.score.is_some());
    }
    assert!(h.trials.iter().any(|t| !t.succeeded()));
}

#[test]
fn seeded_runs_are_byte_identical() {
    let space = ConfigSpace::parse(&fixture("space.json")).unwrap();
    let run = |hill: bool| {
        let mut sink = Vec::new();
        let mut p: Box<dyn Proposer> = if hill {
            Box::new(CoordinateHillClimb::new(42, None))
        } else {
            Box::new(RandomSearch::new(42))
        };
        let h = run_search(
            &space,
            &step_time(),
            p.as_mut(),
            &mut megatron(),
            SearchOptions::new(15),
            Some(&mut sink),
        )
        .unwrap();
        assert_eq!(h.to_jsonl().as_bytes(), &sink[..]);
        sink
    };
    for hill in [false, true] {
        let a = run(hill);
        assert_eq!(a, run(hill));
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().count(), 15);
        assert_eq!(SearchHistory::from_jsonl(&text).unwrap().to_jsonl(), text);
    }
    let a = search(&space, &step_time(), &mut RandomSearch::new(1), &mut megatron(), 10);
    let b = search(&space, &step_time(), &mut RandomSearch::new(2), &mut megatron(), 10);
    assert_ne!(a.to_jsonl(), b.to_jsonl());
}

#[test]
fn wall_time_recorded_only_on_request() {
    let space = ConfigSpace::parse("dimensions: [{key: tp, type: int, choices: [1, 2]}]").unwrap();
    let mut exec = |_: &Config| ok(1.0);
    let mut opts = SearchOptions::new(2);
    opts.record_wall_time = true;
    let h = run_search(&space, &step_time(), &mut RandomSearch::new(0), &mut exec, opts, None).unwrap();
    assert!(h.trials.iter().all(|t| t.wall_time_s.is_some()));
    let h = search(&space, &step_time(), &mut RandomSearch::new(0), &mut exec, 2);
    assert!(h.trials.iter().all(|t| t.wall_time_s.is_none()));
}

/// Five independent dimensions; the cost is a sum of per-dimension terms.
fn surface() -> ConfigSpace {
    ConfigSpace::parse(
        r#"
dimensions:
  - {key: a, type: int, choices: [1, 2, 3, 4, 5]}
  - {key: b, type: int, choices: [0, 1, 2, 3]}
  - {key: c, type: bool}
  - {key: d, type: enum, choices: [x, y, z]}
  - {key: e, type: int, choices: [1, 2, 4, 8]}
"#,
    )
    .unwrap()
}

fn surface_cost(c: &Config) -> f64 {
    let a = c["a"].as_i64().unwrap() as f64;
    let b = c["b"].as_i64().unwrap() as f64;
    let flag = if c["c"].as_bool().unwrap() { 0.0 } else { 3.0 };
    let d = match c["d"].as_str().unwrap() {
        "x" => 2.0,
        "y" => 0.0,
        _ => 1.0,
    };
    let e = (c["e"].as_i64().unwrap() as f64).log2();
    1.0 + (a - 4.0).powi(2) + 2.0 * (b - 1.0).powi(2) + flag + d + (e - 2.0).abs()
}

fn surface_optimum(space: &ConfigSpace) -> (Config, f64) {
    space
        .enumerate()
        .map(|c| {
            let v = surface_cost(&c);
            (c, v)
        })
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap()
}

#[test]
fn hill_climb_reaches_enumerated_optimum() {
    let space = surface();
    let (opt, opt_cost) = surface_optimum(&space);
    let mut hits = 0;
    for seed in 0..100 {
        let mut exec = |c: &Config| ok(surface_cost(c));
        let h = search(&space, &step_time(), &mut CoordinateHillClimb::new(seed, None), &mut exec, 15);
        let best = h.best().unwrap();
        if best.config == opt && best.value == Some(opt_cost) {
            hits += 1;
        }
    }
    assert!(hits >= 95, "optimum found in {hits}/100 runs");
}

/// Each proposal of a climb differs from the best config so far in one
/// dimension; when the climber leaves that neighborhood, the incumbent is a
/// local optimum of the enumerated surface.
#[test]
fn hill_climb_moves_one_dimension_until_local_optimum() {
    let space = surface();
    let mut seen_restart = 0;
    for seed in 0..20 {
        let mut exec = |c: &Config| {
            // A bumpy variant with several local optima.
            let bump = if c["a"] == json!(1) && c["b"] == json!(3) { -30.0 } else { 0.0 };
            ok(40.0 + surface_cost(c) + bump)
        };
        let h = search(&space, &step_time(), &mut CoordinateHillClimb::new(seed, None), &mut exec, 40);
        let mut best = &h.trials[0];
        for t in &h.trials[1..] {
            let diff = space.dimensions.iter().filter(|d| t.config[&d.key] != best.config[&d.key]).count();
            if diff != 1 {
                // Restart: the incumbent must admit no improving single-dimension move.
                for d in &space.dimensions {
                    for v in &d.choices {
                        let mut n = best.config.clone();
                        n.insert(d.key.clone(), v.clone());
                        assert!(step_of(exec(&n)) >= best.value.unwrap());
                    }
                }
                seen_restart += 1;
                break;
            }
            if t.score > best.score {
                best = t;
            }
        }
    }
    assert!(seen_restart > 0);
}

#[test]
fn external_command_echo_repeats_config() {
    let space = ConfigSpace::parse(&fixture("space.json")).unwrap();
    let cmd = r#"cat > /dev/null; echo '{"config": {"tp": 4, "dp": 1, "pp": 4, "micro_batch": 1, "act_ckpt": false}}'"#;
    let h = search(&space, &step_time(), &mut ExternalCommand::new(cmd), &mut megatron(), 3);
    for t in &h.trials {
        assert_eq!(t.config, h.trials[0].config);
        assert_eq!(t.value, Some(0.44));
    }
}

#[test]
fn external_command_sees_history() {
    let space = ConfigSpace::parse("dimensions: [{key: tp, type: int, choices: [1, 2, 3]}]").unwrap();
    // Proposes tp = 1 + number of past trials, read from the request.
    let cmd = r#"python3 -c 'import json,sys; r=json.loads(sys.stdin.readline()); assert r["iteration"]==len(r["history"]); print(json.dumps({"config":{"tp":1+len(r["history"])}}))'"#;
    let mut exec = |c: &Config| ok(c["tp"].as_f64().unwrap());
    let h = search(&space, &step_time(), &mut ExternalCommand::new(cmd), &mut exec, 4);
    let tps: Vec<Value> = h.trials.iter().map(|t| t.config["tp"].clone()).collect();
    assert_eq!(tps, [json!(1), json!(2), json!(3), json!(4)]);
    assert!(matches!(
        &h.trials[3].outcome,
        Outcome::Failed { reason: FailureReason::InvalidConfig(_) }
    ));
}

#[test]
fn external_command_failures_become_trials() {
    let space = ConfigSpace::parse("dimensions: [{key: tp, type: int, choices: [1]}]").unwrap();
    let mut exec = |_: &Config| ok(1.0);
    for cmd in ["exit 3", "echo not-json", "echo '{\"cfg\": {}}'"] {
        let h = search(&space, &step_time(), &mut ExternalCommand::new(cmd), &mut exec, 2);
        assert_eq!(h.trials.len(), 2);
        for t in &h.trials {
            assert!(matches!(&t.outcome, Outcome::Failed { reason: FailureReason::Proposer(_) }), "{cmd}");
            assert_eq!(t.score, None);
        }
    }
}

#[test]
fn composite_pareto_front() {
    let space = ConfigSpace::parse(
        "dimensions: [{key: tp, type: int, choices: [1, 2, 4]}, {key: dp, type: int, choices: [1, 2]}]",
    )
    .unwrap();
    let objective = Objective::Composite {
        w: 0.5,
        t0: 4.0,
        n0: 1.0,
        device_keys: vec!["tp".into(), "dp".into()],
    };
    // More devices run faster, except dp = 2 buys nothing at tp = 4.
    let mut exec = |c: &Config| {
        let tp = c["tp"].as_f64().unwrap();
        let dp = c["dp"].as_f64().unwrap();
        ok(if tp == 4.0 { 1.0 } else { 4.0 / (tp * dp) })
    };
    let h = search(&space, &objective, &mut RandomSearch::new(3), &mut exec, 6);
    let front: Vec<(f64, f64)> = h.pareto().iter().map(|t| (t.devices.unwrap(), t.value.unwrap())).collect();
    assert_eq!(front, [(1.0, 4.0), (2.0, 2.0), (4.0, 1.0)]);
    for t in &h.trials {
        let expect = composite_score(0.5, 4.0, 1.0, t.value.unwrap(), t.devices.unwrap());
        assert_eq!(t.score, Some(expect));
    }
}

proptest! {
    #[test]
    fn running_best_never_decreases(seed in any::<u64>(), fail_mod in 2usize..5) {
        let space = surface();
        let mut calls = 0usize;
        let mut exec = |c: &Config| {
            calls += 1;
            if calls.is_multiple_of(fail_mod) { Err(FailureReason::Executor("flaky".into())) } else { ok(surface_cost(c)) }
        };
        let h = search(&space, &step_time(), &mut CoordinateHillClimb::new(seed, None), &mut exec, 25);
        prop_assert_eq!(h.trials.len(), 25);
        let rb = h.running_best();
        for w in rb.windows(2) {
            if let (Some(a), Some(b)) = (w[0], w[1]) {
                prop_assert!(b >= a);
            }
            prop_assert!(!(w[0].is_some() && w[1].is_none()));
        }
    }

    #[test]
    fn composite_is_monotone(w in 0.01f64..0.99, t in 0.1f64..10.0, n in 1.0f64..64.0, dt in 0.01f64..1.0, dn in 1.0f64..8.0) {
        let s = composite_score(w, 1.0, 16.0, t, n);
        prop_assert!(composite_score(w, 1.0, 16.0, t + dt, n) < s);
        prop_assert!(composite_score(w, 1.0, 16.0, t, n + dn) < s);
        prop_assert_eq!(composite_score(1.0, 1.0, 16.0, t, n), composite_score(1.0, 1.0, 16.0, t, n + dn));
        prop_assert_eq!(composite_score(0.0, 1.0, 16.0, t, n), composite_score(0.0, 1.0, 16.0, t + dt, n));
    }
}
