//! The five subcommands. Each reads the config plus whatever earlier commands
//! left in the output directory, and writes its own artifacts there.

mod bench;
mod collect;
mod fit;
mod mpc;
mod predict;

pub use bench::{bench, BenchReport};
pub use collect::{collect, CollectReport};
pub use fit::{fit, FitReport, LabelReport};
pub use mpc::{mpc, MpcReport};
pub use predict::{predict, EpisodeReport, PredictReport};

use std::fs;
use std::path::{Path, PathBuf};

use krom_core::model_io::{read_koopman_file, read_model_file, StoredModel};
use krom_core::{KoopmanModel, LocalizedKrom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{steps_for, ExperimentConfig, InitialSpec, SimPlant};
use crate::error::{CliError, CliResult};

pub const DATA_DIR: &str = "data";
pub const MODELS_DIR: &str = "models";
pub const KROM_FILE: &str = "krom.json";

pub fn data_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.join(DATA_DIR)
}

pub fn models_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.join(MODELS_DIR)
}

pub fn model_file_name(label: f64) -> String {
    format!("model_u{label}.json")
}

/// Writes via a temporary file and a rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Simulated plant of the config, or a config error for replay data.
pub(crate) fn sim_plant(cfg: &ExperimentConfig, what: &str) -> CliResult<SimPlant> {
    cfg.plant
        .build()?
        .ok_or_else(|| CliError::config(format!("plant: {what} needs a simulated plant, not a replay archive")))
}

/// Initial states and control sequences of every data episode, drawn from
/// one generator seeded with the config seed.
pub(crate) fn episode_plan(cfg: &ExperimentConfig, plant: &SimPlant) -> CliResult<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h = plant.as_plant().h();
    let mut runs = Vec::new();
    for (i, ep) in cfg.data.episodes.iter().enumerate() {
        let steps = steps_for(ep.duration, h, &format!("data.episodes[{i}].duration"))?;
        for _ in 0..ep.count {
            let init = plant.initial_state(&ep.initial, &mut rng, &format!("data.episodes[{i}].initial"))?;
            let controls = ep
                .schedule
                .controls(steps, &mut rng)
                .map_err(|e| CliError::config(format!("data.episodes[{i}].schedule: {e}")))?;
            runs.push((init, controls));
        }
    }
    Ok(runs)
}

/// Resolves explicit initial conditions, falling back to the data episodes'.
pub(crate) fn initial_states(
    cfg: &ExperimentConfig,
    plant: &SimPlant,
    specs: &[InitialSpec],
    field: &str,
) -> CliResult<Vec<Vec<f64>>> {
    if specs.is_empty() {
        return Ok(episode_plan(cfg, plant)?.into_iter().map(|(init, _)| init).collect());
    }
    // a separate stream so that explicit draws do not replay the data draws
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| plant.initial_state(s, &mut rng, &format!("{field}[{i}]")))
        .collect()
}

/// Per-label models written by `fit`, sorted by label.
pub(crate) fn load_label_models(cfg: &ExperimentConfig) -> CliResult<Vec<KoopmanModel>> {
    let dir = models_dir(cfg);
    let entries = fs::read_dir(&dir).map_err(|e| CliError::Data(format!("{}: {e} (run fit first)", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("model_u") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("no model files in {} (run fit first)", dir.display())));
    }
    let mut models = paths
        .iter()
        .map(|p| read_koopman_file(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))))
        .collect::<CliResult<Vec<_>>>()?;
    models.sort_by(|a, b| a.control_label().total_cmp(&b.control_label()));
    Ok(models)
}

/// Interpolating model written by `fit`.
pub(crate) fn load_krom(cfg: &ExperimentConfig) -> CliResult<LocalizedKrom> {
    let path = models_dir(cfg).join(KROM_FILE);
    match read_model_file(&path).map_err(|e| CliError::Data(format!("{}: {e} (run fit first)", path.display())))? {
        StoredModel::Localized(m) => Ok(m),
        StoredModel::Koopman(_) => Err(CliError::Data(format!("{} holds a single Koopman matrix", path.display()))),
    }
}

/// `||a - b||_F / ||a||_F` over the columns `from..`.
pub(crate) fn relative_l2(reference: &nalgebra::DMatrix<f64>, model: &nalgebra::DMatrix<f64>, from: usize) -> f64 {
    let n = reference.ncols() - from;
    let r = reference.columns(from, n);
    let m = model.columns(from, n);
    (r - m).norm() / r.norm()
}

/// Maximum that keeps a NaN instead of skipping it.
pub(crate) fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}
