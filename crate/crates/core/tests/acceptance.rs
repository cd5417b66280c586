//! Acceptance suite. Run with
//! `cargo test -p pamdi --test acceptance -- --nocapture`
//! to see one PASS/FAIL line per criterion.

mod common;

use std::time::{Duration, Instant};

use pamdi::config::{Algorithm, LinkConfig, ModelEntry, OracleConfig, Overrides, Scenario};
use pamdi::cost::{path_delay, LinkSpec};
use pamdi::metrics::summarize;
use pamdi::model::{SourceId, SourceSpec, Task, TaskKey, WorkerId, WorkerProfile};
use pamdi::oracle::{
    brute_force_optimal, objective, per_task_minimizer, Instance, OracleSource, PolicyAssignment, Stage,
};
use pamdi::scheduler::{decide_offload, Candidate};
use pamdi::sim::topology::Topology;
use pamdi::sim::SimulationTrace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

const ORACLE_INSTANCES: u64 = 200;
const ORACLE_LIMIT: Duration = Duration::from_secs(10);
const DECOMPOSITION_INSTANCES: u64 = 2;
const DECOMPOSITION_LIMIT: Duration = Duration::from_secs(60);
const CONTENTION_RUNS: u64 = 1000;
const CONTENTION_LIMIT: Duration = Duration::from_secs(300);
const CHURN_RUNS: u64 = 100;
const CHURN_MEAN: f64 = 50.0;
const CHURN_MEAN_TOL: f64 = 0.03;
const CHURN_MIN_DRAWS: usize = 10_000;
const CHURN_HORIZON: f64 = 20_000.0;
const LOCAL_PARITY_TOL: f64 = 0.10;
const VARIANT_LIMIT: Duration = Duration::from_secs(120);
const MULTIHOP_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const PIPELINE_TOL: f64 = 0.05;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn avg(sc: &Scenario, trace: &SimulationTrace, source: &str) -> f64 {
    summarize(trace, &sc.sources)
        .into_iter()
        .find(|m| m.name == source)
        .and_then(|m| m.avg_inference_time)
        .unwrap_or(f64::INFINITY)
}

fn profile(i: u32, spf: f64) -> WorkerProfile {
    WorkerProfile {
        id: WorkerId(i),
        name: format!("w{i}"),
        seconds_per_flop: spf,
        is_source_host: false,
        mobile: false,
    }
}

fn random_full_topology(rng: &mut ChaCha8Rng, n: u32) -> Topology {
    let profiles = (0..n).map(|i| profile(i, 1.0 / rng.random_range(1.0e9..1.0e10))).collect();
    let mut links = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            links.push(LinkSpec {
                a: WorkerId(a),
                b: WorkerId(b),
                bandwidth_bytes_per_sec: rng.random_range(1.0e6..1.0e8),
                propagation_delay_sec: rng.random_range(1.0e-5..1.0e-2),
            });
        }
    }
    Topology::new(profiles, links)
}

fn oracle_source(id: u32, host: u32, priority: f64, gain: f64, data: u32, stages: Vec<Stage>) -> OracleSource {
    OracleSource {
        spec: SourceSpec {
            id: SourceId(id),
            name: format!("s{id}"),
            host: WorkerId(host),
            model_id: "m".into(),
            priority,
            accuracy_gain: gain,
            num_data_points: data,
        },
        stages,
    }
}

fn random_stage(rng: &mut ChaCha8Rng) -> Stage {
    Stage { flops: rng.random_range(1.0e8..5.0e9), input_bytes: rng.random_range(1_000..2_000_000) }
}

/// The offload rule, fed the same candidate set a worker assembles (itself
/// plus its one-hop neighbors), against the oracle's per-task minimizer.
fn library_decision_matches(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=4u32);
    let topo = random_full_topology(&mut rng, n);
    let sources = rng.random_range(1..=3u32);
    let srcs: Vec<OracleSource> = (0..sources)
        .map(|s| {
            let k = rng.random_range(1..=3);
            let stages = (0..k).map(|_| random_stage(&mut rng)).collect();
            let host = rng.random_range(0..n);
            oracle_source(s, host, rng.random_range(0.5..100.0), rng.random_range(0.5..2.0), 1, stages)
        })
        .collect();
    let mut inst = Instance::new(topo, srcs);
    for b in inst.backlog.iter_mut() {
        *b = if rng.random_bool(0.5) { rng.random_range(0.0..3.0) } else { 0.0 };
    }
    let mut keys = inst.tasks();
    keys.truncate(3);
    let now = rng.random_range(0.0..100.0);
    for key in keys {
        let src = inst.sources.iter().find(|s| s.spec.id == key.source).unwrap();
        let from = if key.partition == 1 { src.spec.host } else { WorkerId(rng.random_range(0..n)) };
        let stage = &src.stages[key.partition as usize - 1];
        let task = Task {
            key,
            num_partitions: src.stages.len() as u32,
            created_at: now,
            flops: stage.flops,
            input_bytes: stage.input_bytes,
            output_bytes: 0,
        };
        let mut cands = vec![Candidate {
            worker: from,
            delay: 0.0,
            seconds_per_flop: inst.topology.profile(from).seconds_per_flop,
            backlog: inst.backlog[from.0 as usize],
        }];
        for j in inst.topology.neighbors(from) {
            cands.push(Candidate {
                worker: j,
                delay: path_delay(&inst.topology, from, j, task.input_bytes).unwrap(),
                seconds_per_flop: inst.topology.profile(j).seconds_per_flop,
                backlog: inst.backlog[j.0 as usize],
            });
        }
        let d = decide_offload(&task, src.spec.weight(), &cands, now).map_err(|e| e.to_string())?;
        let (w, score) = per_task_minimizer(&inst, key, from).map_err(|e| e.to_string())?;
        if d.chosen != w || d.score != score {
            return Err(format!("seed {seed} {key}: rule chose {} ({}), oracle {} ({})", d.chosen, d.score, w, score));
        }
    }
    Ok(())
}

/// The first offload decision of a live PA-MDI run against the oracle.
fn engine_decision_matches(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = rng.random_range(2..=4usize);
    let mut cfg = bare(&format!("oracle-{seed}"), Algorithm::PaMdi);
    cfg.network.fully_connected = false;
    let names: Vec<String> = (0..n).map(|i| ((b'A' + i as u8) as char).to_string()).collect();
    for nm in &names {
        cfg.workers.push(worker(nm, rng.random_range(1.0..10.0)));
    }
    for a in 0..n {
        for b in a + 1..n {
            cfg.links.push(LinkConfig {
                a: names[a].clone(),
                b: names[b].clone(),
                bandwidth: Some(rng.random_range(1.0e6..1.0e8)),
                propagation: Some(rng.random_range(1.0e-5..1.0e-2)),
            });
        }
    }
    let flops = rng.random_range(1.0e8..5.0e9);
    let input = rng.random_range(1_000..2_000_000);
    cfg.models.push(ModelEntry::Inline(model("m", &[flops], input, &[40])));
    let host = names[rng.random_range(0..n)].clone();
    cfg.sources.push(source("s", &host, "m", rng.random_range(0.5..100.0), 1, 1));
    let (sc, trace) = run_cfg(&cfg);
    let inst = Instance::from_scenario(&sc).map_err(|e| e.to_string())?;
    let key = TaskKey { source: SourceId(0), data: 1, partition: 1 };
    let (w, _) = per_task_minimizer(&inst, key, sc.source(SourceId(0)).host).map_err(|e| e.to_string())?;
    let chosen = trace
        .lines
        .iter()
        .find(|l| l.split(' ').nth(1) == Some("decide"))
        .and_then(|l| l.split_whitespace().find_map(|t| t.strip_prefix("chosen=")))
        .ok_or_else(|| format!("seed {seed}: no decision in trace"))?;
    if chosen != sc.topology.name(w) {
        return Err(format!("seed {seed}: engine chose {chosen}, oracle {}", sc.topology.name(w)));
    }
    Ok(())
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    for seed in 0..ORACLE_INSTANCES {
        for r in [library_decision_matches(seed), engine_decision_matches(seed)] {
            if let Err(e) = r {
                mismatches.push(e);
            }
        }
    }
    let took = start.elapsed();
    outcome(
        mismatches.is_empty() && took < ORACLE_LIMIT,
        format!(
            "{} mismatches over {} instances (rule and live run), {:.2?}{}",
            mismatches.len(),
            ORACLE_INSTANCES,
            took,
            mismatches.first().map(|m| format!("; first: {m}")).unwrap_or_default()
        ),
    )
}

fn decomposition() -> Outcome {
    let start = Instant::now();
    let betas = OracleConfig::default().betas;
    let mut problems = Vec::new();
    let mut checked = 0;
    for seed in 0..DECOMPOSITION_INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let topo = random_full_topology(&mut rng, 3);
        let srcs = (0..2)
            .map(|s| {
                let stages = vec![random_stage(&mut rng), random_stage(&mut rng)];
                oracle_source(
                    s,
                    rng.random_range(0..3),
                    rng.random_range(1.0..100.0),
                    rng.random_range(0.5..2.0),
                    2,
                    stages,
                )
            })
            .collect();
        let mut inst = Instance::new(topo, srcs);
        for p in inst.failure.iter_mut() {
            *p = rng.random_range(0.0..0.3);
        }
        for &beta in &betas {
            let sol = match brute_force_optimal(&inst, beta, u64::MAX) {
                Ok(s) => s,
                Err(e) => {
                    problems.push(format!("beta {beta}: {e}"));
                    continue;
                }
            };
            checked += 1;
            if sol.assignment != sol.joined || sol.value != sol.joined_value {
                problems.push(format!("seed {seed} beta {beta}: global {} vs joined {}", sol.value, sol.joined_value));
            }
            // no sampled policy may beat the reported optimum
            let tasks = inst.tasks();
            for _ in 0..2000 {
                let a: PolicyAssignment = tasks.iter().map(|&t| (t, WorkerId(rng.random_range(0..3)))).collect();
                if objective(&a, &inst, beta).unwrap() > sol.value {
                    problems.push(format!("seed {seed} beta {beta}: sampled policy beats optimum"));
                    break;
                }
            }
        }
    }
    let took = start.elapsed();
    outcome(
        problems.is_empty() && took < DECOMPOSITION_LIMIT * DECOMPOSITION_INSTANCES as u32,
        format!(
            "{checked} (instance, beta) pairs of 3^16 policies, joined per-data optima equal the global optimum: {}, {:.2?}{}",
            problems.is_empty(),
            took,
            problems.first().map(|p| format!("; first: {p}")).unwrap_or_default()
        ),
    )
}

fn protocol_safety() -> Outcome {
    let start = Instant::now();
    let mut bad = Vec::new();
    let (mut denials, mut timeouts, mut grants) = (0, 0, 0);
    for seed in 0..CONTENTION_RUNS {
        let cfg = random_contention(seed);
        let (sc, trace) = run_cfg(&cfg);
        let a = audit(&sc, &trace);
        let expected: u64 = sc.sources.iter().map(|s| u64::from(s.num_data_points)).sum();
        let s = &trace.stats;
        denials += s.denials;
        timeouts += s.rtc_timeouts;
        grants += trace.lines.iter().filter(|l| l.split(' ').nth(1) == Some("grant")).count();
        if !a.clean()
            || a.results != expected
            || trace.truncated
            || s.double_grants + s.duplicated_tasks + s.lost_tasks + s.protocol_errors > 0
        {
            bad.push(format!(
                "seed {seed}: {a:?} stats dg={} dup={} lost={}",
                s.double_grants, s.duplicated_tasks, s.lost_tasks
            ));
        }
    }
    let took = start.elapsed();
    outcome(
        bad.is_empty() && took < CONTENTION_LIMIT,
        format!(
            "{} of {CONTENTION_RUNS} runs with a double grant, duplicate or loss ({grants} grants, {denials} denials, {timeouts} RTC timeouts), {:.2?}{}",
            bad.len(),
            took,
            bad.first().map(|b| format!("; first: {b}")).unwrap_or_default()
        ),
    )
}

fn churn_resilience() -> Outcome {
    let base = load("multihop_churn_nano_ts");
    let mut bad = Vec::new();
    let mut draws = Vec::new();
    let mut churn_events = 0;
    for seed in 1..=CHURN_RUNS {
        let (sc, trace) = run_as(&base, Algorithm::PaMdi, seed);
        let a = audit(&sc, &trace);
        let expected: u64 = sc.sources.iter().map(|s| u64::from(s.num_data_points)).sum();
        if !a.clean() || a.results != expected || trace.truncated || trace.stats.lost_tasks > 0 {
            bad.push(format!("seed {seed}: {a:?}"));
        }
        let churn = sc.churn.as_ref().expect("churn scenario");
        // the run must follow the seeded schedule exactly
        let observed: Vec<String> =
            trace.lines.iter().filter(|l| matches!(l.split(' ').nth(1), Some("leave" | "return"))).cloned().collect();
        let scheduled: Vec<String> = churn
            .schedule(trace.end_time)
            .iter()
            .map(|e| {
                format!("{:.9} {} {}", e.time, if e.leave { "leave" } else { "return" }, sc.topology.name(e.worker))
            })
            .collect();
        if observed != scheduled[..observed.len().min(scheduled.len())] {
            bad.push(format!("seed {seed}: churn events differ from the seeded schedule"));
        }
        churn_events += observed.len();
        draws.extend(churn.intervals(CHURN_HORIZON));
    }
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let mean_ok = draws.len() >= CHURN_MIN_DRAWS && (mean - CHURN_MEAN).abs() / CHURN_MEAN <= CHURN_MEAN_TOL;
    outcome(
        bad.is_empty() && mean_ok,
        format!(
            "{} of {CHURN_RUNS} runs incomplete ({churn_events} churn events seen); mean gap {mean:.3} s over {} draws{}",
            bad.len(),
            draws.len(),
            bad.first().map(|b| format!("; first: {b}")).unwrap_or_default()
        ),
    )
}

fn five_node_structure() -> Outcome {
    let base = load("five_node_small_ts");
    let seed = base.seed;
    let ts = "time-sensitive";
    let timed = |o: Overrides| {
        let start = Instant::now();
        let (sc, trace) = run_cfg(&with(&base, o));
        (avg(&sc, &trace, ts), start.elapsed())
    };
    let pa = |p: Vec<u32>| {
        timed(Overrides {
            algorithm: Some(Algorithm::PaMdi),
            partitions: Some(p),
            seed: Some(seed),
            ..Default::default()
        })
    };
    let other = |a: Algorithm| timed(Overrides { algorithm: Some(a), seed: Some(seed), ..Default::default() });
    let (pa22, t1) = pa(vec![2, 2]);
    let (pa42, t2) = pa(vec![4, 2]);
    let (local, t3) = other(Algorithm::Local);
    let (ar, t4) = other(Algorithm::ArMdi);
    let (ms, t5) = other(Algorithm::MsMdi);
    let slowest = [t1, t2, t3, t4, t5].into_iter().max().unwrap();
    let a = (pa22 - local).abs() / local <= LOCAL_PARITY_TOL;
    let b = pa22 < ar && pa22 < ms;
    let c = pa42 >= pa22;
    outcome(
        a && b && c && slowest < VARIANT_LIMIT,
        format!(
            "time-sensitive avg: PA(2,2) {pa22:.4} s, Local {local:.4} s (gap {:.1}%), AR {ar:.4} s, MS {ms:.4} s, PA(4,2) {pa42:.4} s; (a) {a} (b) {b} (c) {c}; slowest variant {slowest:.2?}",
            100.0 * (pa22 - local).abs() / local
        ),
    )
}

fn multihop_direction() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for name in ["multihop_nano_ts", "multihop_xavier_ts"] {
        let base = load(name);
        let mut worst_margin = f64::INFINITY;
        for seed in MULTIHOP_SEEDS {
            let t = |a| {
                let (sc, trace) = run_as(&base, a, seed);
                avg(&sc, &trace, "time-sensitive")
            };
            let pa = t(Algorithm::PaMdi);
            let best_other =
                [Algorithm::ArMdi, Algorithm::MsMdi, Algorithm::Local].into_iter().map(t).fold(f64::INFINITY, f64::min);
            pass &= pa < best_other;
            worst_margin = worst_margin.min((best_other - pa) / best_other);
        }
        lines.push(format!("{name}: smallest lead over the best baseline {:.1}%", 100.0 * worst_margin));
    }
    outcome(pass, format!("{} over seeds {:?}", lines.join(", "), MULTIHOP_SEEDS))
}

fn priority_blindness() -> Outcome {
    let base = load("multihop_nano_ts");
    let mut swapped = base.clone();
    let (p0, p1) = (swapped.sources[0].priority, swapped.sources[1].priority);
    swapped.sources[0].priority = p1;
    swapped.sources[1].priority = p0;
    let metrics = |cfg, a| {
        let (sc, trace) = run_as(cfg, a, base.seed);
        let m: Vec<String> = summarize(&trace, &sc.sources)
            .iter()
            .map(|m| format!("{} {} {:?}", m.name, m.results, m.avg_inference_time.map(f64::to_bits)))
            .collect();
        (m, trace.render())
    };
    let mut detail = Vec::new();
    let mut pass = true;
    for a in [Algorithm::ArMdi, Algorithm::MsMdi, Algorithm::Local] {
        let same = metrics(&base, a) == metrics(&swapped, a);
        pass &= same;
        detail.push(format!("{a} identical={same}"));
    }
    let pa_changed = metrics(&base, Algorithm::PaMdi).0 != metrics(&swapped, Algorithm::PaMdi).0;
    pass &= pa_changed;
    detail.push(format!("pa-mdi changed={pa_changed}"));
    outcome(pass, detail.join(", "))
}

fn determinism() -> Outcome {
    let mut differing = Vec::new();
    let mut runs = 0;
    for path in shipped() {
        let cfg = pamdi::ScenarioConfig::load(&path).expect("shipped scenario loads");
        for a in Algorithm::ALL {
            let (_, t1) = run_as(&cfg, a, cfg.seed);
            let (_, t2) = run_as(&cfg, a, cfg.seed);
            runs += 1;
            if t1.render() != t2.render() {
                differing.push(format!("{} {a}", cfg.name));
            }
        }
    }
    outcome(
        differing.is_empty(),
        format!(
            "{} of {runs} (scenario, algorithm) reruns differ{}",
            differing.len(),
            differing.first().map(|d| format!("; first: {d}")).unwrap_or_default()
        ),
    )
}

fn pipeline_throughput() -> Outcome {
    let cfg = load("pipeline_two_workers");
    let (sc, trace) = run_cfg(&cfg);
    let times = result_times(&trace, &sc.sources[0].name);
    let n = times.len();
    // steady state: drop the first half as warm-up
    let tail = &times[n / 2..];
    let interval = (tail[tail.len() - 1] - tail[0]) / (tail.len() - 1) as f64;

    let model = sc.model_of(SourceId(0));
    let spf = sc.topology.profiles().iter().map(|p| p.seconds_per_flop).fold(0.0, f64::max);
    let half = model.layers.len() / 2;
    let stage = |r: std::ops::Range<usize>| model.layers[r].iter().map(|l| l.flops).sum::<f64>() * spf;
    let max_stage = stage(0..half).max(stage(half..model.layers.len()));
    let handoff = sc.network.propagation + model.layers[half - 1].output_bytes as f64 / sc.network.bandwidth;
    let expected = max_stage + handoff;
    let err = (interval - expected).abs() / expected;
    outcome(
        err <= PIPELINE_TOL && n == sc.sources[0].num_data_points as usize,
        format!(
            "steady-state interval {interval:.6} s vs closed form {expected:.6} s ({:.3}% off), {n} results",
            100.0 * err
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("oracle equivalence", oracle_equivalence),
        ("decomposition", decomposition),
        ("protocol safety", protocol_safety),
        ("churn resilience", churn_resilience),
        ("five-node structure", five_node_structure),
        ("multi-hop direction", multihop_direction),
        ("baseline priority blindness", priority_blindness),
        ("determinism", determinism),
        ("pipeline throughput", pipeline_throughput),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!("{} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
        if !o.pass {
            failed.push(*name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
