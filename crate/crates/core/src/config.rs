//! Scenario files: a TOML description of one experiment, its validation, and
//! the resolved [`Scenario`] the engine runs.
//!
//! ```toml
//! name = "example"
//! algorithm = "pa-mdi"        # pa-mdi | ar-mdi | ms-mdi | local
//! seed = 7
//! max_sim_time = 5000.0
//!
//! [network]
//! fully_connected = true
//! bandwidth = 2.5e6           # bytes/s, used by links that do not set one
//!
//! [[models]]
//! file = "../data/models/resnet56_32.toml"
//!
//! [[workers]]
//! name = "A"
//! gflops = 5.0
//!
//! [[sources]]
//! name = "time-sensitive"
//! host = "A"
//! model = "resnet56_32"
//! priority = 100.0
//! data_points = 100
//! partitions = 2
//! ```
//!
//! Unknown keys anywhere are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::RingChain;
use crate::cost::LinkSpec;
use crate::error::ConfigError;
use crate::model::{Cut, ModelSpec, PartitionPlan, SourceId, SourceSpec, WorkerId, WorkerProfile};
use crate::sim::churn::ChurnProcess;
use crate::sim::topology::Topology;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "pa-mdi")]
    PaMdi,
    #[serde(rename = "ar-mdi")]
    ArMdi,
    #[serde(rename = "ms-mdi")]
    MsMdi,
    #[serde(rename = "local")]
    Local,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::PaMdi, Algorithm::ArMdi, Algorithm::MsMdi, Algorithm::Local];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::PaMdi => "pa-mdi",
            Algorithm::ArMdi => "ar-mdi",
            Algorithm::MsMdi => "ms-mdi",
            Algorithm::Local => "local",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str().eq_ignore_ascii_case(s))
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Medium {
    /// One FIFO per link.
    #[default]
    PerLink,
    /// A single FIFO shared by every data transfer in the network.
    Shared,
}

fn default_bandwidth() -> f64 {
    2.5e6
}
fn default_propagation() -> f64 {
    1e-4
}
fn default_control_bytes() -> u64 {
    1024
}
fn default_timeout_factor() -> f64 {
    3.0
}
fn default_one() -> f64 {
    1.0
}
fn default_adapt_every() -> u32 {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default)]
    pub fully_connected: bool,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    #[serde(default = "default_propagation")]
    pub propagation: f64,
    #[serde(default = "default_control_bytes")]
    pub control_bytes: u64,
    #[serde(default)]
    pub medium: Medium,
    #[serde(default = "default_timeout_factor")]
    pub rtc_timeout_factor: f64,
    /// Each compute time is scaled by a uniform factor in `[1-j, 1+j]`.
    #[serde(default)]
    pub compute_jitter: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            fully_connected: false,
            bandwidth: default_bandwidth(),
            propagation: default_propagation(),
            control_bytes: default_control_bytes(),
            medium: Medium::default(),
            rtc_timeout_factor: default_timeout_factor(),
            compute_jitter: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelEntry {
    File { file: String },
    Inline(ModelSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seconds_per_flop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gflops: Option<f64>,
    #[serde(default)]
    pub mobile: bool,
}

impl WorkerConfig {
    pub fn seconds_per_flop(&self) -> Option<f64> {
        match (self.seconds_per_flop, self.gflops) {
            (Some(s), None) => Some(s),
            (None, Some(g)) => Some(1e-9 / g),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub a: String,
    pub b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propagation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub name: String,
    pub host: String,
    pub model: String,
    pub priority: f64,
    #[serde(default = "default_one")]
    pub accuracy_gain: f64,
    pub data_points: u32,
    /// Uniform split into this many partitions. Ignored when `cuts` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partitions: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cuts: Option<Vec<[u32; 2]>>,
    /// Worker chain for the ring baselines, starting at the host.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ring: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChurnConfig {
    pub mean_interval: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    /// AR-MDI recomputes its layer allocation every this many data points.
    #[serde(default = "default_adapt_every")]
    pub adapt_every: u32,
    /// Data points a ring source keeps in flight; defaults to the chain length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<u32>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { adapt_every: default_adapt_every(), window: None }
    }
}

fn default_betas() -> Vec<f64> {
    vec![0.01, 0.1, 1.0, 10.0]
}
fn default_cap() -> u64 {
    1_000_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
    #[serde(default = "default_cap")]
    pub cap: u64,
    /// Per-worker probability that a task placed there fails.
    #[serde(default)]
    pub failure: BTreeMap<String, f64>,
    /// Data points per source used when building the oracle instance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_points: Option<u32>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { betas: default_betas(), cap: default_cap(), failure: BTreeMap::new(), data_points: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub seed: u64,
    pub max_sim_time: f64,
    #[serde(default)]
    pub network: NetworkConfig,
    pub models: Vec<ModelEntry>,
    pub workers: Vec<WorkerConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<LinkConfig>,
    pub sources: Vec<SourceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub churn: Option<ChurnConfig>,
    #[serde(default)]
    pub baselines: BaselineConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleConfig>,
}

/// Command-line overrides applied on top of a scenario file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub algorithm: Option<Algorithm>,
    pub max_sim_time: Option<f64>,
    /// Partition counts, one per source in declaration order.
    pub partitions: Option<Vec<u32>>,
    pub data_points: Option<u32>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    /// Reads a scenario file and inlines every model file it references,
    /// resolving paths relative to the scenario file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = read(path)?;
        let mut cfg: ScenarioConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), source: Box::new(e) })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for m in &mut cfg.models {
            if let ModelEntry::File { file } = m {
                let mp = base.join(&*file);
                *m = ModelEntry::Inline(load_model(&mp)?);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(a) = o.algorithm {
            self.algorithm = a;
        }
        if let Some(t) = o.max_sim_time {
            self.max_sim_time = t;
        }
        if let Some(d) = o.data_points {
            for s in &mut self.sources {
                s.data_points = d;
            }
        }
        if let Some(parts) = &o.partitions {
            if parts.len() != self.sources.len() {
                return Err(ConfigError::Override(format!(
                    "{} partition counts given for {} sources",
                    parts.len(),
                    self.sources.len()
                )));
            }
            for (s, &p) in self.sources.iter_mut().zip(parts) {
                s.partitions = Some(p);
                s.cuts = None;
            }
        }
        Ok(())
    }

    fn model(&self, id: &str) -> Option<&ModelSpec> {
        self.models.iter().find_map(|m| match m {
            ModelEntry::Inline(spec) if spec.id == id => Some(spec),
            _ => None,
        })
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.to_path_buf(), source: e })
}

pub fn load_model(path: &Path) -> Result<ModelSpec, ConfigError> {
    let text = read(path)?;
    toml::from_str(&text).map_err(|e| ConfigError::Parse { path: PathBuf::from(path), source: Box::new(e) })
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

fn plan_for(src: &SourceConfig, model: &ModelSpec) -> Result<PartitionPlan, String> {
    match (&src.cuts, src.partitions) {
        (Some(cuts), _) => {
            Ok(PartitionPlan::new(model.id.clone(), cuts.iter().map(|c| Cut::new(c[0], c[1])).collect()))
        }
        (None, Some(p)) => PartitionPlan::uniform(model, p).map_err(|e| format!("source `{}`: {e}", src.name)),
        (None, None) => Ok(PartitionPlan::uniform(model, 1).expect("one partition always fits")),
    }
}

/// Every violated invariant or unresolved reference; empty when the
/// scenario can be run.
pub fn validate_scenario(cfg: &ScenarioConfig) -> Vec<String> {
    let mut v = Vec::new();
    if !positive(cfg.max_sim_time) {
        v.push("max_sim_time must be > 0".into());
    }
    let n = &cfg.network;
    if !positive(n.bandwidth) {
        v.push("network.bandwidth must be > 0".into());
    }
    if !(n.propagation >= 0.0 && n.propagation.is_finite()) {
        v.push("network.propagation must be >= 0".into());
    }
    if !positive(n.rtc_timeout_factor) {
        v.push("network.rtc_timeout_factor must be > 0".into());
    }
    if !(0.0..1.0).contains(&n.compute_jitter) {
        v.push("network.compute_jitter must be in [0, 1)".into());
    }

    let mut model_ids = BTreeSet::new();
    for m in &cfg.models {
        match m {
            ModelEntry::File { file } => v.push(format!("model file `{file}` was not loaded")),
            ModelEntry::Inline(spec) => {
                if !model_ids.insert(spec.id.clone()) {
                    v.push(format!("duplicate model id `{}`", spec.id));
                }
                v.extend(spec.check());
            }
        }
    }

    let mut names = BTreeSet::new();
    for w in &cfg.workers {
        if !names.insert(w.name.as_str()) {
            v.push(format!("duplicate worker `{}`", w.name));
        }
        match w.seconds_per_flop() {
            Some(s) if positive(s) => {}
            Some(_) => v.push(format!("worker `{}`: seconds_per_flop must be > 0", w.name)),
            None => v.push(format!("worker `{}`: set exactly one of seconds_per_flop or gflops", w.name)),
        }
    }
    if cfg.workers.is_empty() {
        v.push("no workers".into());
    }

    let mut pairs = BTreeSet::new();
    for l in &cfg.links {
        for end in [&l.a, &l.b] {
            if !names.contains(end.as_str()) {
                v.push(format!("link {}-{}: unknown worker `{end}`", l.a, l.b));
            }
        }
        if l.a == l.b {
            v.push(format!("link {}-{} is a self-link", l.a, l.b));
        }
        let key = if l.a < l.b { (l.a.clone(), l.b.clone()) } else { (l.b.clone(), l.a.clone()) };
        if !pairs.insert(key) {
            v.push(format!("duplicate link {}-{}", l.a, l.b));
        }
        if let Some(bw) = l.bandwidth {
            if !positive(bw) {
                v.push(format!("link {}-{}: bandwidth must be > 0", l.a, l.b));
            }
        }
        if let Some(p) = l.propagation {
            if !(p >= 0.0 && p.is_finite()) {
                v.push(format!("link {}-{}: propagation must be >= 0", l.a, l.b));
            }
        }
    }
    if cfg.network.fully_connected && !cfg.links.is_empty() {
        v.push("network.fully_connected and explicit links are mutually exclusive".into());
    }

    let mut hosts = BTreeSet::new();
    let mut src_names = BTreeSet::new();
    for s in &cfg.sources {
        if !src_names.insert(s.name.as_str()) {
            v.push(format!("duplicate source `{}`", s.name));
        }
        if !names.contains(s.host.as_str()) {
            v.push(format!("source `{}`: unknown host `{}`", s.name, s.host));
        }
        hosts.insert(s.host.as_str());
        if !positive(s.priority) {
            v.push(format!("source `{}`: priority must be > 0", s.name));
        }
        if !positive(s.accuracy_gain) {
            v.push(format!("source `{}`: accuracy_gain must be > 0", s.name));
        }
        if s.data_points == 0 {
            v.push(format!("source `{}`: data_points must be >= 1", s.name));
        }
        match cfg.model(&s.model) {
            None => v.push(format!("source `{}`: unknown model `{}`", s.name, s.model)),
            Some(m) => match plan_for(s, m) {
                Ok(plan) => v.extend(plan.check(m).into_iter().map(|e| format!("source `{}`: {e}", s.name))),
                Err(e) => v.push(e),
            },
        }
        if let Some(ring) = &s.ring {
            if ring.first().map(String::as_str) != Some(s.host.as_str()) {
                v.push(format!("source `{}`: ring must start at its host", s.name));
            }
            let mut seen = BTreeSet::new();
            for r in ring {
                if !names.contains(r.as_str()) {
                    v.push(format!("source `{}`: ring names unknown worker `{r}`", s.name));
                }
                if !seen.insert(r) {
                    v.push(format!("source `{}`: ring repeats worker `{r}`", s.name));
                }
            }
        }
    }
    if cfg.sources.is_empty() {
        v.push("no sources".into());
    }
    for w in &cfg.workers {
        if w.mobile && hosts.contains(w.name.as_str()) {
            v.push(format!("worker `{}` hosts a source and cannot be mobile", w.name));
        }
    }
    if let Some(c) = &cfg.churn {
        if !positive(c.mean_interval) {
            v.push("churn.mean_interval must be > 0".into());
        }
    }
    if cfg.baselines.adapt_every == 0 {
        v.push("baselines.adapt_every must be >= 1".into());
    }
    if cfg.baselines.window == Some(0) {
        v.push("baselines.window must be >= 1".into());
    }
    if let Some(o) = &cfg.oracle {
        if o.betas.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            v.push("oracle.betas must be >= 0".into());
        }
        for (w, p) in &o.failure {
            if !names.contains(w.as_str()) {
                v.push(format!("oracle.failure names unknown worker `{w}`"));
            }
            if !(0.0..=1.0).contains(p) {
                v.push(format!("oracle.failure[{w}] must be in [0, 1]"));
            }
        }
    }
    v
}

/// A validated scenario with names resolved to ids.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub max_sim_time: f64,
    pub network: NetworkConfig,
    pub models: BTreeMap<String, ModelSpec>,
    pub topology: Topology,
    pub sources: Vec<SourceSpec>,
    pub plans: Vec<PartitionPlan>,
    pub rings: Vec<RingChain>,
    pub churn: Option<ChurnProcess>,
    pub baselines: BaselineConfig,
    pub oracle: OracleConfig,
}

impl Scenario {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self, ConfigError> {
        let violations = validate_scenario(cfg);
        if !violations.is_empty() {
            return Err(ConfigError::Invalid(violations));
        }
        let ids: BTreeMap<&str, WorkerId> =
            cfg.workers.iter().enumerate().map(|(i, w)| (w.name.as_str(), WorkerId(i as u32))).collect();
        let hosts: BTreeSet<&str> = cfg.sources.iter().map(|s| s.host.as_str()).collect();
        let workers: Vec<WorkerProfile> = cfg
            .workers
            .iter()
            .enumerate()
            .map(|(i, w)| WorkerProfile {
                id: WorkerId(i as u32),
                name: w.name.clone(),
                seconds_per_flop: w.seconds_per_flop().expect("validated"),
                is_source_host: hosts.contains(w.name.as_str()),
                mobile: w.mobile,
            })
            .collect();
        let net = &cfg.network;
        let links: Vec<LinkSpec> = if net.fully_connected {
            let n = workers.len() as u32;
            (0..n)
                .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
                .map(|(a, b)| LinkSpec {
                    a: WorkerId(a),
                    b: WorkerId(b),
                    bandwidth_bytes_per_sec: net.bandwidth,
                    propagation_delay_sec: net.propagation,
                })
                .collect()
        } else {
            cfg.links
                .iter()
                .map(|l| LinkSpec {
                    a: ids[l.a.as_str()],
                    b: ids[l.b.as_str()],
                    bandwidth_bytes_per_sec: l.bandwidth.unwrap_or(net.bandwidth),
                    propagation_delay_sec: l.propagation.unwrap_or(net.propagation),
                })
                .collect()
        };
        let models: BTreeMap<String, ModelSpec> = cfg
            .models
            .iter()
            .filter_map(|m| match m {
                ModelEntry::Inline(s) => Some((s.id.clone(), s.clone())),
                ModelEntry::File { .. } => None,
            })
            .collect();
        let mut sources = Vec::new();
        let mut plans = Vec::new();
        let mut rings = Vec::new();
        for (i, s) in cfg.sources.iter().enumerate() {
            let id = SourceId(i as u32);
            let host = ids[s.host.as_str()];
            let model = &models[&s.model];
            plans.push(plan_for(s, model).expect("validated"));
            sources.push(SourceSpec {
                id,
                name: s.name.clone(),
                host,
                model_id: s.model.clone(),
                priority: s.priority,
                accuracy_gain: s.accuracy_gain,
                num_data_points: s.data_points,
            });
            let order = match &s.ring {
                Some(r) => r.iter().map(|n| ids[n.as_str()]).collect(),
                None => {
                    let n = workers.len() as u32;
                    (0..n).map(|k| WorkerId((host.0 + k) % n)).collect()
                }
            };
            rings.push(RingChain { source: id, order });
        }
        let mobile: Vec<WorkerId> = workers.iter().filter(|w| w.mobile).map(|w| w.id).collect();
        let churn = cfg.churn.as_ref().filter(|_| !mobile.is_empty()).map(|c| ChurnProcess {
            mobile_workers: mobile,
            mean_interval_sec: c.mean_interval,
            rng_seed: cfg.seed,
        });
        Ok(Scenario {
            name: cfg.name.clone(),
            algorithm: cfg.algorithm,
            seed: cfg.seed,
            max_sim_time: cfg.max_sim_time,
            network: cfg.network.clone(),
            models,
            topology: Topology::new(workers, links),
            sources,
            plans,
            rings,
            churn,
            baselines: cfg.baselines.clone(),
            oracle: cfg.oracle.clone().unwrap_or_default(),
        })
    }

    pub fn model_of(&self, source: SourceId) -> &ModelSpec {
        &self.models[&self.sources[source.0 as usize].model_id]
    }

    pub fn source(&self, source: SourceId) -> &SourceSpec {
        &self.sources[source.0 as usize]
    }
}
