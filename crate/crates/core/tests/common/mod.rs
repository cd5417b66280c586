#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use pamdi::config::{
    Algorithm, LinkConfig, ModelEntry, NetworkConfig, Overrides, Scenario, ScenarioConfig, SourceConfig, WorkerConfig,
};
use pamdi::model::{LayerSpec, ModelSpec};
use pamdi::sim::{run, SimulationTrace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub fn shipped() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(scenarios_dir())
        .expect("scenarios directory")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    v.sort();
    v
}

pub fn load(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(scenarios_dir().join(format!("{name}.toml"))).expect("shipped scenario loads")
}

pub fn with(cfg: &ScenarioConfig, o: Overrides) -> ScenarioConfig {
    let mut c = cfg.clone();
    c.apply(&o).expect("overrides apply");
    c
}

pub fn run_cfg(cfg: &ScenarioConfig) -> (Scenario, SimulationTrace) {
    let sc = Scenario::from_config(cfg).expect("scenario builds");
    let trace = run(&sc).expect("run succeeds");
    (sc, trace)
}

pub fn run_as(cfg: &ScenarioConfig, algorithm: Algorithm, seed: u64) -> (Scenario, SimulationTrace) {
    run_cfg(&with(cfg, Overrides { algorithm: Some(algorithm), seed: Some(seed), ..Default::default() }))
}

pub fn model(id: &str, flops: &[f64], input_bytes: u64, bytes: &[u64]) -> ModelSpec {
    ModelSpec {
        id: id.into(),
        input_bytes,
        output_bytes: *bytes.last().expect("at least one layer"),
        layers: flops
            .iter()
            .zip(bytes)
            .enumerate()
            .map(|(i, (&f, &b))| LayerSpec { index: i as u32 + 1, flops: f, output_bytes: b })
            .collect(),
    }
}

pub fn worker(name: &str, gflops: f64) -> WorkerConfig {
    WorkerConfig { name: name.into(), seconds_per_flop: None, gflops: Some(gflops), mobile: false }
}

pub fn source(name: &str, host: &str, model: &str, priority: f64, data_points: u32, partitions: u32) -> SourceConfig {
    SourceConfig {
        name: name.into(),
        host: host.into(),
        model: model.into(),
        priority,
        accuracy_gain: 1.0,
        data_points,
        partitions: Some(partitions),
        cuts: None,
        ring: None,
    }
}

pub fn bare(name: &str, algorithm: Algorithm) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        algorithm,
        seed: 1,
        max_sim_time: 1.0e6,
        network: NetworkConfig { fully_connected: true, ..Default::default() },
        models: Vec::new(),
        workers: Vec::new(),
        links: Vec::new(),
        sources: Vec::new(),
        churn: None,
        baselines: Default::default(),
        oracle: None,
    }
}

fn name(i: usize) -> String {
    ((b'A' + i as u8) as char).to_string()
}

/// A random static scenario in which several sources compete for a few
/// similar workers, so RTCs regularly collide.
pub fn random_contention(seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=5usize);
    let mut cfg = bare(&format!("contention-{seed}"), Algorithm::PaMdi);
    cfg.seed = seed;
    cfg.network.fully_connected = rng.random_bool(0.5);
    cfg.network.compute_jitter = 0.1;
    for i in 0..n {
        cfg.workers.push(worker(&name(i), rng.random_range(2.0..8.0)));
    }
    if !cfg.network.fully_connected {
        // a random spanning tree plus a few extra edges
        let mut edges = BTreeSet::new();
        for i in 1..n {
            let j = rng.random_range(0..i);
            edges.insert((j, i));
        }
        for _ in 0..n {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a != b {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        for (a, b) in edges {
            cfg.links.push(LinkConfig {
                a: name(a),
                b: name(b),
                bandwidth: Some(rng.random_range(1.0e6..5.0e7)),
                propagation: Some(rng.random_range(1.0e-5..1.0e-3)),
            });
        }
    }
    let layers = rng.random_range(2..=6usize);
    let flops: Vec<f64> = (0..layers).map(|_| rng.random_range(1.0e8..1.0e9)).collect();
    let bytes: Vec<u64> = (0..layers).map(|_| rng.random_range(1_000..200_000)).collect();
    cfg.models.push(ModelEntry::Inline(model("m", &flops, 150_000, &bytes)));
    let sources = rng.random_range(1..=3usize);
    for s in 0..sources {
        let host = name(rng.random_range(0..n));
        let priority = [1.0, 10.0, 100.0][rng.random_range(0..3)];
        let parts = rng.random_range(1..=layers.min(4)) as u32;
        cfg.sources.push(source(&format!("s{s}"), &host, "m", priority, rng.random_range(2..=6), parts));
    }
    cfg
}

/// Findings of an audit done purely from trace lines and task records.
#[derive(Debug, Default, PartialEq)]
pub struct Audit {
    /// A worker issued a grant while an earlier one was still open.
    pub overlapping_grants: u64,
    /// A task key recorded as done more than once.
    pub duplicated: u64,
    /// Data points with a partition that never completed.
    pub incomplete: u64,
    pub results: u64,
    pub protocol_errors: u64,
}

impl Audit {
    pub fn clean(&self) -> bool {
        self.overlapping_grants == 0 && self.duplicated == 0 && self.incomplete == 0 && self.protocol_errors == 0
    }
}

fn field<'a>(payload: &'a str, key: &str) -> Option<&'a str> {
    payload.split_whitespace().find_map(|t| t.strip_prefix(key))
}

pub fn audit(sc: &Scenario, trace: &SimulationTrace) -> Audit {
    let mut a = Audit::default();
    // worker -> (requester, task) of the open grant
    let mut open: BTreeMap<String, (String, String)> = BTreeMap::new();
    let mut computed = BTreeSet::new();
    for line in &trace.lines {
        let mut parts = line.splitn(3, ' ');
        let _time = parts.next();
        let kind = parts.next().unwrap_or("");
        let payload = parts.next().unwrap_or("");
        let first = payload.split_whitespace().next().unwrap_or("").to_string();
        match kind {
            "grant" => {
                let to = field(payload, "to=").unwrap_or("").to_string();
                let task = field(payload, "task=").unwrap_or("").to_string();
                if open.insert(first, (to, task)).is_some() {
                    a.overlapping_grants += 1;
                }
            }
            "grant-expired" => {
                open.remove(&first);
            }
            "leave" => {
                open.remove(&first);
            }
            "recv" if first == "FeatureTransfer" => {
                let at = field(payload, "at=").unwrap_or("").to_string();
                let from = field(payload, "from=").unwrap_or("");
                let task = field(payload, "task=").unwrap_or("");
                if open.get(&at).is_some_and(|(to, t)| to == from && t == task) {
                    open.remove(&at);
                }
            }
            "compute-done" => {
                let task = field(payload, "task=").unwrap_or("").to_string();
                if !computed.insert(task) {
                    a.duplicated += 1;
                }
            }
            "result" => a.results += 1,
            "protocol-error" => a.protocol_errors += 1,
            _ => {}
        }
    }
    for s in &sc.sources {
        for d in 1..=s.num_data_points {
            let k1 = trace.tasks.iter().find(|r| r.key.source == s.id && r.key.data == d && r.key.partition == 1);
            let Some(k1) = k1 else {
                a.incomplete += 1;
                continue;
            };
            let all = (1..=k1.num_partitions)
                .all(|k| trace.tasks.iter().any(|r| r.key.source == s.id && r.key.data == d && r.key.partition == k));
            if !all {
                a.incomplete += 1;
            }
        }
    }
    a
}

/// Times of the `result` lines of one source, in trace order.
pub fn result_times(trace: &SimulationTrace, source: &str) -> Vec<f64> {
    trace
        .lines
        .iter()
        .filter_map(|l| {
            let mut p = l.splitn(3, ' ');
            let t: f64 = p.next()?.parse().ok()?;
            (p.next()? == "result" && p.next()?.split_whitespace().next()? == source).then_some(t)
        })
        .collect()
}
