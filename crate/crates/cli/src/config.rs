//! Experiment configuration: one JSON document per recipe, with dotted-path
//! overrides applied before parsing.

use std::fs;
use std::path::{Path, PathBuf};

use krom_core::control::Admissible;
use krom_core::plants::{BurgersConfig, BurgersPlant, LinearPlant, OdePlant, Plant, Profile, Schedule};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantSpec,
    pub dictionary: DictionaryConfig,
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predict: Option<PredictConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpc: Option<MpcConfig>,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantSpec {
    Ode(OdePlant),
    Burgers(BurgersConfig),
    Linear(LinearSpec),
    /// Recorded snapshots of an external simulator.
    Replay(ReplaySpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    /// Observation matrix; the full state is observed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<Vec<f64>>>,
    pub h: f64,
    #[serde(default = "four")]
    pub substeps: usize,
}

fn four() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySpec {
    /// Archive file or directory; relative paths resolve against the config file.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionaryConfig {
    /// Checked against the plant's observable count when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    pub max_order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub labels: Vec<f64>,
    #[serde(default)]
    pub episodes: Vec<EpisodeSpec>,
    /// Trailing episodes kept out of the fit and used for validation.
    #[serde(default)]
    pub held_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSpec {
    pub initial: InitialSpec,
    pub duration: f64,
    pub schedule: Schedule,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub count: usize,
}

fn one() -> usize {
    1
}

fn is_one(n: &usize) -> bool {
    *n == 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialSpec {
    State(Vec<f64>),
    /// Each state component drawn uniformly from `[lo, hi]`.
    Random { random_uniform: [f64; 2] },
    Profile(Profile),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Switched,
    Bilinear,
    #[default]
    Localized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub kind: ModelKind,
    /// Interpolation knots; all data labels when absent (outermost two for
    /// a bilinear model).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knots: Option<Vec<f64>>,
    #[serde(default = "svd_tol")]
    pub svd_tol: f64,
    #[serde(default)]
    pub ridge: f64,
    /// Candidate ridge values, picked by leave-one-episode-out validation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge_ladder: Option<Vec<f64>>,
}

fn svd_tol() -> f64 {
    1e-10
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::default(),
            knots: None,
            svd_tol: svd_tol(),
            ridge: 0.0,
            ridge_ladder: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signal {
    Constant { u: f64 },
    /// `offset + amplitude sin(omega t)`
    Sinusoid { offset: f64, amplitude: f64, omega: f64 },
    Cycle { labels: Vec<f64>, dwell_steps: usize },
}

impl Signal {
    pub fn sample(&self, steps: usize, h: f64) -> CliResult<Vec<f64>> {
        match self {
            Signal::Constant { u } => Ok(vec![*u; steps]),
            Signal::Sinusoid {
                offset,
                amplitude,
                omega,
            } => Ok((0..steps).map(|i| offset + amplitude * (omega * i as f64 * h).sin()).collect()),
            Signal::Cycle { labels, dwell_steps } => {
                if labels.is_empty() || *dwell_steps == 0 {
                    return Err(CliError::config("predict.signal: cycle needs labels and dwell_steps > 0"));
                }
                Ok((0..steps).map(|i| labels[(i / dwell_steps) % labels.len()]).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    /// Initial states of the predicted episodes; the data episodes' initial
    /// states when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initials: Vec<InitialSpec>,
    #[serde(default)]
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<Signal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSpec {
    Constant { values: Vec<f64> },
    /// Single component `offset + amplitude sin(omega t)`.
    Sinusoid { offset: f64, amplitude: f64, omega: f64 },
    Table { rows: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopPlant {
    /// The configured plant.
    #[default]
    Plant,
    /// The reduced model itself (zero plant-model mismatch).
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig {
    #[serde(default = "ten")]
    pub horizon: usize,
    pub admissible: Admissible,
    pub components: Vec<usize>,
    pub weights: Vec<f64>,
    pub reference: ReferenceSpec,
    pub initial: InitialSpec,
    pub steps: usize,
    #[serde(default = "yes")]
    pub latency_compensation: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_control: Option<f64>,
    #[serde(default = "gtol")]
    pub gtol: f64,
    #[serde(default = "max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub plant: LoopPlant,
    /// Write solve wall-times; off keeps reruns byte-identical.
    #[serde(default)]
    pub record_timing: bool,
}

fn ten() -> usize {
    10
}

fn yes() -> bool {
    true
}

fn gtol() -> f64 {
    1e-8
}

fn max_iter() -> usize {
    500
}

pub const MIN_BENCH_STEPS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "bench_steps")]
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSpec>,
    /// Control held during the benchmark; midpoint of the labels by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
}

fn bench_steps() -> usize {
    MIN_BENCH_STEPS
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            steps: bench_steps(),
            initial: None,
            u: None,
        }
    }
}

/// Sets `path` (dot separated, numeric segments index arrays) to `value`.
/// Missing object keys are created; the value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, path: &str, value: &str) -> CliResult<()> {
    let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(CliError::config(format!("malformed override path '{path}'")));
    }
    let mut node = doc;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), parsed);
                    return Ok(());
                }
                map.entry(seg.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| CliError::config(format!("'{seg}' in '{path}' must index an array")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| CliError::config(format!("index {idx} in '{path}' out of range ({len})")))?;
                if last {
                    *slot = parsed;
                    return Ok(());
                }
                slot
            }
            _ => return Err(CliError::config(format!("'{path}' descends into a scalar at '{seg}'"))),
        };
    }
    Ok(())
}

/// Parses a document, reporting the failing field path.
pub fn from_value(doc: Value) -> CliResult<ExperimentConfig> {
    serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(format!("{path}: {}", e.into_inner()))
    })
}

/// Reads a config file, applies `key.path=value` overrides, and validates.
/// A relative replay path is resolved against the file's directory.
pub fn load(path: &Path, overrides: &[String]) -> CliResult<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let mut doc: Value =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    for o in overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("override '{o}' is not key.path=value")))?;
        apply_override(&mut doc, key, value)?;
    }
    let mut cfg = from_value(doc)?;
    if let PlantSpec::Replay(r) = &mut cfg.plant {
        if r.path.is_relative() {
            if let Some(dir) = path.parent() {
                r.path = dir.join(&r.path);
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// A simulated plant built from its spec.
#[derive(Debug, Clone)]
pub enum SimPlant {
    Ode(OdePlant),
    Burgers(BurgersPlant),
    Linear(LinearPlant),
}

impl SimPlant {
    pub fn as_plant(&self) -> &dyn Plant {
        match self {
            SimPlant::Ode(p) => p,
            SimPlant::Burgers(p) => p,
            SimPlant::Linear(p) => p,
        }
    }

    /// Resolves an initial-condition spec to a full plant state.
    pub fn initial_state<R: Rng>(&self, spec: &InitialSpec, rng: &mut R, field: &str) -> CliResult<Vec<f64>> {
        let n = self.as_plant().state_dim();
        let state = match (spec, self) {
            (InitialSpec::State(v), _) => v.clone(),
            (InitialSpec::Random { random_uniform: [lo, hi] }, _) => {
                if !(lo < hi) {
                    return Err(CliError::config(format!("{field}: random_uniform needs lo < hi")));
                }
                (0..n).map(|_| rng.random_range(*lo..*hi)).collect()
            }
            (InitialSpec::Profile(p), SimPlant::Burgers(b)) => {
                b.initial_state(p).map_err(|e| CliError::config(format!("{field}: {e}")))?
            }
            (InitialSpec::Profile(_), _) => {
                return Err(CliError::config(format!("{field}: profiles apply to the Burgers plant only")))
            }
        };
        if state.len() != n {
            return Err(CliError::config(format!(
                "{field}: expected {n} state components, found {}",
                state.len()
            )));
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(CliError::config(format!("{field}: non-finite initial state")));
        }
        Ok(state)
    }
}

fn matrix(rows: &[Vec<f64>], field: &str) -> CliResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(CliError::config(format!("{field}: expected a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

impl PlantSpec {
    /// Builds the simulator; `None` for a replay plant.
    pub fn build(&self) -> CliResult<Option<SimPlant>> {
        let wrap = |e: krom_core::Error| CliError::config(format!("plant: {e}"));
        Ok(match self {
            PlantSpec::Ode(p) => {
                p.validate().map_err(wrap)?;
                Some(SimPlant::Ode(*p))
            }
            PlantSpec::Burgers(c) => Some(SimPlant::Burgers(BurgersPlant::new(c.clone()).map_err(wrap)?)),
            PlantSpec::Linear(l) => {
                let mut p = LinearPlant::new(matrix(&l.a, "plant.a")?, DVector::from_vec(l.b.clone()), l.h, l.substeps)
                    .map_err(wrap)?;
                if let Some(c) = &l.c {
                    p = p.with_observation(matrix(c, "plant.c")?).map_err(wrap)?;
                }
                Some(SimPlant::Linear(p))
            }
            PlantSpec::Replay(_) => None,
        })
    }
}

impl ExperimentConfig {
    /// Observable count of the plant, when it can be known without data.
    pub fn plant_q(&self) -> CliResult<Option<usize>> {
        Ok(self.plant.build()?.map(|p| p.as_plant().q()))
    }

    pub fn validate(&self) -> CliResult<()> {
        let labels = &self.data.labels;
        if labels.is_empty() {
            return Err(CliError::config("data.labels: at least one control label is required"));
        }
        if labels.iter().any(|u| !u.is_finite()) {
            return Err(CliError::config("data.labels: labels must be finite"));
        }
        let known = |u: &f64| labels.contains(u);
        let sim = self.plant.build()?;
        if sim.is_some() && self.data.episodes.is_empty() {
            return Err(CliError::config("data.episodes: a simulated plant needs at least one episode"));
        }
        if let (Some(plant), Some(q)) = (&sim, self.dictionary.q) {
            if plant.as_plant().q() != q {
                return Err(CliError::config(format!(
                    "dictionary.q: {q} does not match the plant's {} observables",
                    plant.as_plant().q()
                )));
            }
        }
        for (i, ep) in self.data.episodes.iter().enumerate() {
            if let Some(u) = ep.schedule.labels().iter().find(|u| !known(u)) {
                return Err(CliError::config(format!(
                    "data.episodes[{i}].schedule: control {u} is not among data.labels"
                )));
            }
            if ep.count == 0 {
                return Err(CliError::config(format!("data.episodes[{i}].count: must be positive")));
            }
            if let Some(plant) = &sim {
                steps_for(ep.duration, plant.as_plant().h(), &format!("data.episodes[{i}].duration"))?;
            }
        }
        if let Some(knots) = &self.model.knots {
            if let Some(u) = knots.iter().find(|u| !known(u)) {
                return Err(CliError::config(format!("model.knots: {u} is not among data.labels")));
            }
            if self.model.kind == ModelKind::Bilinear && knots.len() != 2 {
                return Err(CliError::config("model.knots: a bilinear model takes exactly two knots"));
            }
        }
        if self.model.kind != ModelKind::Switched && self.knots().len() < 2 {
            return Err(CliError::config("model: interpolating models need at least two labels"));
        }
        if !(self.model.svd_tol > 0.0 && self.model.svd_tol < 1.0) {
            return Err(CliError::config("model.svd_tol: must lie in (0, 1)"));
        }
        if let Some(mpc) = &self.mpc {
            if mpc.horizon == 0 {
                return Err(CliError::config("mpc.horizon: must be at least 1"));
            }
            match (&mpc.admissible, self.model.kind) {
                (Admissible::Labels { labels: adm }, _) => {
                    if let Some(u) = adm.iter().find(|u| !known(u)) {
                        return Err(CliError::config(format!("mpc.admissible: {u} is not among data.labels")));
                    }
                }
                (Admissible::Interval { lo, hi }, kind) => {
                    if kind == ModelKind::Switched {
                        return Err(CliError::config("mpc.admissible: a switched model needs a label set"));
                    }
                    let knots = self.knots();
                    let (klo, khi) = (knots[0], knots[knots.len() - 1]);
                    if !(lo <= hi) || *lo < klo || *hi > khi {
                        return Err(CliError::config(format!(
                            "mpc.admissible: [{lo}, {hi}] is not covered by the model interval [{klo}, {khi}]"
                        )));
                    }
                }
            }
            if sim.is_none() && mpc.plant == LoopPlant::Plant {
                return Err(CliError::config("mpc.plant: a replay archive cannot be driven in closed loop"));
            }
        }
        if self.bench.steps < MIN_BENCH_STEPS {
            return Err(CliError::config(format!(
                "bench.steps: at least {MIN_BENCH_STEPS} steps are required, got {}",
                self.bench.steps
            )));
        }
        Ok(())
    }

    /// Knots of the interpolating model, ascending.
    pub fn knots(&self) -> Vec<f64> {
        let mut knots = self.model.knots.clone().unwrap_or_else(|| self.data.labels.clone());
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        if self.model.kind == ModelKind::Bilinear && self.model.knots.is_none() && knots.len() > 2 {
            knots = vec![knots[0], knots[knots.len() - 1]];
        }
        knots
    }
}

/// Whole number of sample steps in `duration`.
pub fn steps_for(duration: f64, h: f64, field: &str) -> CliResult<usize> {
    if !(duration > 0.0) {
        return Err(CliError::config(format!("{field}: duration must be positive")));
    }
    let steps = (duration / h).round();
    if (steps * h - duration).abs() > 1e-9 * duration.max(1.0) {
        return Err(CliError::config(format!("{field}: {duration} is not a multiple of h = {h}")));
    }
    Ok(steps as usize)
}
