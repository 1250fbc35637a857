//! Line-oriented `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sncbf_core::dynamics::DynamicsKind;
use sncbf_core::inference::EnsembleMode;
use sncbf_core::sim::Scenario;

use crate::registry;

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self { line: Some(line), message: message.into() }
    }

    fn new(message: impl Into<String>) -> Self {
        Self { line: None, message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self { line: Some(l), message } => write!(f, "line {l}: {message}"),
            Self { line: None, message } => f.write_str(message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Raw key/value pairs with the line each came from.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::at(n, format!("expected `key = value`, got {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
            return Err(ConfigError::at(n, format!("bad key {k:?}")));
        }
        if out.insert(k.to_string(), (n, v.to_string())).is_some() {
            return Err(ConfigError::at(n, format!("duplicate key {k}")));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSection {
    pub obstacles: usize,
    pub demonstrations: usize,
    pub exploration: f64,
    pub horizon: usize,
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub theta: f64,
    pub k: usize,
    pub ensemble: usize,
    pub refine_rounds: usize,
    pub refine_iterations: usize,
    pub seed_pairs: usize,
    pub samples_per_seed: usize,
    pub jitter: f64,
    pub dynamics_iterations: usize,
    /// Fraction of demonstrations held out for evaluation.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            obstacles: 6,
            demonstrations: 100,
            exploration: 0.2,
            horizon: 5,
            iterations: 2000,
            batch: 64,
            lr: 1e-3,
            gamma: 0.01,
            kappa: 0.1,
            theta: 0.05,
            k: 5,
            ensemble: 1,
            refine_rounds: 5,
            refine_iterations: 300,
            seed_pairs: 200,
            samples_per_seed: 20,
            jitter: 0.2,
            dynamics_iterations: 4000,
            holdout: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferSection {
    pub b: f64,
    pub l: usize,
    pub sensing_range: f64,
    pub variance_threshold: f64,
    pub ensemble_mode: EnsembleMode,
    /// Inject the S-PFM action as a candidate.
    pub nominal: bool,
    /// Seconds of velocity extrapolation when scoring goal progress.
    pub lookahead: f64,
}

impl Default for InferSection {
    fn default() -> Self {
        Self { b: 0.5, l: 64, sensing_range: 5.0, variance_threshold: 0.05, ensemble_mode: EnsembleMode::MeanPositive, nominal: true, lookahead: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineSection {
    pub zeta: f64,
    pub eta: f64,
    pub influence: f64,
    pub spfm_samples: usize,
    pub gpfm_gain: f64,
    pub gpfm_cruise: f64,
    pub smpc_horizon: usize,
    pub smpc_samples: usize,
    pub smpc_nominal_samples: usize,
    pub smpc_sigma: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            zeta: 1.0,
            eta: 1.0,
            influence: 2.0,
            spfm_samples: 64,
            gpfm_gain: 2.0,
            gpfm_cruise: 1.0,
            smpc_horizon: 3,
            smpc_samples: 10,
            smpc_nominal_samples: 10,
            smpc_sigma: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecompSection {
    pub train_density: usize,
    pub densities: Vec<usize>,
    pub rollouts: usize,
    pub episodes: usize,
    pub frames: usize,
    pub k: usize,
    pub hidden: usize,
    pub iterations: usize,
    pub lr: f64,
    pub seeds: Vec<u64>,
}

impl Default for DecompSection {
    fn default() -> Self {
        Self {
            train_density: 6,
            densities: vec![6, 12, 24, 48],
            rollouts: 80,
            episodes: 5,
            frames: 200,
            k: 5,
            hidden: 64,
            iterations: 10000,
            lr: 3e-3,
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplaySection {
    pub pitch: f64,
    /// Render every n-th frame.
    pub every: usize,
    pub max_cells: usize,
}

impl Default for ReplaySection {
    fn default() -> Self {
        Self { pitch: 0.1, every: 20, max_cells: 250_000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dynamics: DynamicsKind,
    pub methods: Vec<String>,
    pub densities: Vec<usize>,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub models_dir: Option<PathBuf>,
    pub arena_half_extent: f64,
    pub dt: f64,
    pub max_steps: usize,
    pub collision_radius: f64,
    pub goal_tolerance: f64,
    pub endpoint_radius: f64,
    pub pedestrian_radius: f64,
    pub pedestrian_speed: f64,
    pub train: TrainSection,
    pub infer: InferSection,
    pub baselines: BaselineSection,
    pub decomp: DecompSection,
    pub replay: ReplaySection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dynamics: DynamicsKind::Dubins,
            methods: vec!["sncbf".into(), "spfm".into(), "gpfm".into()],
            densities: vec![6, 24, 60],
            episodes: 100,
            seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("out"),
            models_dir: None,
            arena_half_extent: 10.0,
            dt: 0.1,
            max_steps: 400,
            collision_radius: 0.5,
            goal_tolerance: 0.5,
            endpoint_radius: 5.0,
            pedestrian_radius: 0.3,
            pedestrian_speed: 1.0,
            train: TrainSection::default(),
            infer: InferSection::default(),
            baselines: BaselineSection::default(),
            decomp: DecompSection::default(),
            replay: ReplaySection::default(),
        }
    }
}

fn scalar<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError::at(line, format!("{key}: cannot parse {v:?}")))
}

fn list<T: FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>, ConfigError> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| scalar(line, key, s)).collect()
}

fn flag(line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::at(line, format!("{key}: expected true or false, got {v:?}"))),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (key, (n, v)) in parse_pairs(text)? {
            let v = v.as_str();
            let k = key.as_str();
            match k {
                "dynamics" => {
                    c.dynamics = DynamicsKind::from_name(v).ok_or_else(|| ConfigError::at(n, format!("unknown dynamics kind {v:?}")))?
                }
                "methods" => c.methods = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
                "densities" => c.densities = list(n, k, v)?,
                "episodes" => c.episodes = scalar(n, k, v)?,
                "seeds" => c.seeds = list(n, k, v)?,
                "out" => c.out_dir = PathBuf::from(v),
                "models" => c.models_dir = Some(PathBuf::from(v)),
                "scenario.arena_half_extent" => c.arena_half_extent = scalar(n, k, v)?,
                "scenario.dt" => c.dt = scalar(n, k, v)?,
                "scenario.max_steps" => c.max_steps = scalar(n, k, v)?,
                "scenario.collision_radius" => c.collision_radius = scalar(n, k, v)?,
                "scenario.goal_tolerance" => c.goal_tolerance = scalar(n, k, v)?,
                "scenario.endpoint_radius" => c.endpoint_radius = scalar(n, k, v)?,
                "scenario.pedestrian_radius" => c.pedestrian_radius = scalar(n, k, v)?,
                "scenario.pedestrian_speed" => c.pedestrian_speed = scalar(n, k, v)?,
                "train.obstacles" => c.train.obstacles = scalar(n, k, v)?,
                "train.demonstrations" => c.train.demonstrations = scalar(n, k, v)?,
                "train.exploration" => c.train.exploration = scalar(n, k, v)?,
                "train.horizon" => c.train.horizon = scalar(n, k, v)?,
                "train.iterations" => c.train.iterations = scalar(n, k, v)?,
                "train.batch" => c.train.batch = scalar(n, k, v)?,
                "train.lr" => c.train.lr = scalar(n, k, v)?,
                "train.gamma" => c.train.gamma = scalar(n, k, v)?,
                "train.kappa" => c.train.kappa = scalar(n, k, v)?,
                "train.theta" => c.train.theta = scalar(n, k, v)?,
                "train.k" => c.train.k = scalar(n, k, v)?,
                "train.ensemble" => c.train.ensemble = scalar(n, k, v)?,
                "train.refine_rounds" => c.train.refine_rounds = scalar(n, k, v)?,
                "train.refine_iterations" => c.train.refine_iterations = scalar(n, k, v)?,
                "train.seed_pairs" => c.train.seed_pairs = scalar(n, k, v)?,
                "train.samples_per_seed" => c.train.samples_per_seed = scalar(n, k, v)?,
                "train.jitter" => c.train.jitter = scalar(n, k, v)?,
                "train.dynamics_iterations" => c.train.dynamics_iterations = scalar(n, k, v)?,
                "train.holdout" => c.train.holdout = scalar(n, k, v)?,
                "train.seed" => c.train.seed = scalar(n, k, v)?,
                "infer.b" => c.infer.b = scalar(n, k, v)?,
                "infer.l" => c.infer.l = scalar(n, k, v)?,
                "infer.sensing_range" => c.infer.sensing_range = scalar(n, k, v)?,
                "infer.variance_threshold" => c.infer.variance_threshold = scalar(n, k, v)?,
                "infer.ensemble_mode" => {
                    c.infer.ensemble_mode = match v {
                        "mean" => EnsembleMode::MeanPositive,
                        "all" => EnsembleMode::AllPositive,
                        _ => return Err(ConfigError::at(n, format!("{k}: expected mean or all, got {v:?}"))),
                    }
                }
                "infer.nominal" => c.infer.nominal = flag(n, k, v)?,
                "infer.lookahead" => c.infer.lookahead = scalar(n, k, v)?,
                "baselines.zeta" => c.baselines.zeta = scalar(n, k, v)?,
                "baselines.eta" => c.baselines.eta = scalar(n, k, v)?,
                "baselines.influence" => c.baselines.influence = scalar(n, k, v)?,
                "baselines.spfm_samples" => c.baselines.spfm_samples = scalar(n, k, v)?,
                "baselines.gpfm_gain" => c.baselines.gpfm_gain = scalar(n, k, v)?,
                "baselines.gpfm_cruise" => c.baselines.gpfm_cruise = scalar(n, k, v)?,
                "baselines.smpc_horizon" => c.baselines.smpc_horizon = scalar(n, k, v)?,
                "baselines.smpc_samples" => c.baselines.smpc_samples = scalar(n, k, v)?,
                "baselines.smpc_nominal_samples" => c.baselines.smpc_nominal_samples = scalar(n, k, v)?,
                "baselines.smpc_sigma" => c.baselines.smpc_sigma = scalar(n, k, v)?,
                "decomp.train_density" => c.decomp.train_density = scalar(n, k, v)?,
                "decomp.densities" => c.decomp.densities = list(n, k, v)?,
                "decomp.rollouts" => c.decomp.rollouts = scalar(n, k, v)?,
                "decomp.episodes" => c.decomp.episodes = scalar(n, k, v)?,
                "decomp.frames" => c.decomp.frames = scalar(n, k, v)?,
                "decomp.k" => c.decomp.k = scalar(n, k, v)?,
                "decomp.hidden" => c.decomp.hidden = scalar(n, k, v)?,
                "decomp.iterations" => c.decomp.iterations = scalar(n, k, v)?,
                "decomp.lr" => c.decomp.lr = scalar(n, k, v)?,
                "decomp.seeds" => c.decomp.seeds = list(n, k, v)?,
                "replay.pitch" => c.replay.pitch = scalar(n, k, v)?,
                "replay.every" => c.replay.every = scalar(n, k, v)?,
                "replay.max_cells" => c.replay.max_cells = scalar(n, k, v)?,
                _ => return Err(ConfigError::at(n, format!("unknown key {k}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::new("seeds must not be empty"));
        }
        if self.methods.is_empty() {
            return Err(ConfigError::new("methods must not be empty"));
        }
        for m in &self.methods {
            if !registry::METHODS.contains(&m.as_str()) {
                return Err(ConfigError::new(format!("unregistered method {m:?}; known: {}", registry::METHODS.join(", "))));
            }
        }
        if self.episodes == 0 {
            return Err(ConfigError::new("episodes must be at least 1"));
        }
        let positive = [
            ("scenario.dt", self.dt),
            ("scenario.arena_half_extent", self.arena_half_extent),
            ("infer.b", self.infer.b),
            ("train.gamma", self.train.gamma),
            ("train.kappa", self.train.kappa),
            ("train.lr", self.train.lr),
            ("replay.pitch", self.replay.pitch),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::new(format!("{k} must be positive and finite")));
            }
        }
        if self.train.ensemble == 0 || self.train.k == 0 || self.infer.l == 0 {
            return Err(ConfigError::new("train.ensemble, train.k and infer.l must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.train.holdout) || !(0.0..=1.0).contains(&self.train.exploration) {
            return Err(ConfigError::new("train.holdout must lie in [0, 1) and train.exploration in [0, 1]"));
        }
        if !(self.infer.lookahead >= 0.0 && self.infer.lookahead.is_finite()) {
            return Err(ConfigError::new("infer.lookahead must be non-negative and finite"));
        }
        if self.decomp.seeds.is_empty() || self.decomp.densities.is_empty() {
            return Err(ConfigError::new("decomp.seeds and decomp.densities must not be empty"));
        }
        Ok(())
    }

    /// Scenario for `obstacles` pedestrians; episodes re-randomize endpoints.
    pub fn scenario(&self, obstacles: usize, seed: u64) -> Scenario {
        let mut s = Scenario::new(self.dynamics, obstacles, seed);
        s.arena_half_extent = self.arena_half_extent;
        s.dt = self.dt;
        s.max_steps = self.max_steps;
        s.collision_radius = self.collision_radius;
        s.goal_tolerance = self.goal_tolerance;
        s.pedestrian.radius = self.pedestrian_radius;
        s.pedestrian.pref_speed = self.pedestrian_speed;
        s
    }

    pub fn models_dir(&self) -> PathBuf {
        self.models_dir.clone().unwrap_or_else(|| self.out_dir.join("models"))
    }

    pub fn with_seed_offset(mut self, offset: u64) -> Self {
        for s in self.seeds.iter_mut().chain(self.decomp.seeds.iter_mut()) {
            *s = s.wrapping_add(offset);
        }
        self.train.seed = self.train.seed.wrapping_add(offset);
        self
    }
}
