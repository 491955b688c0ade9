use std::path::PathBuf;

use krom_core::plants::{collect as record, ingest, SnapshotArchive};
use serde::Serialize;

use super::{data_dir, episode_plan};
use crate::config::{ExperimentConfig, PlantSpec};
use crate::error::CliResult;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollectReport {
    pub files: Vec<PathBuf>,
    pub q: usize,
    pub h: f64,
    /// Snapshot pairs per episode.
    pub pairs: Vec<usize>,
    pub labels: Vec<f64>,
}

/// Simulates every data episode, or copies a replay archive, into `out/data`.
pub fn collect(cfg: &ExperimentConfig) -> CliResult<CollectReport> {
    let archive: SnapshotArchive = match &cfg.plant {
        PlantSpec::Replay(r) => ingest(&r.path)?,
        _ => {
            let plant = super::sim_plant(cfg, "collect")?;
            let runs = episode_plan(cfg, &plant)?;
            record(plant.as_plant(), &runs)?
        }
    };
    let files = archive.write_dir(&data_dir(cfg), Some(cfg.seed))?;
    log::info!("wrote {} episodes to {}", files.len(), data_dir(cfg).display());
    Ok(CollectReport {
        files,
        q: archive.q,
        h: archive.h,
        pairs: archive.episodes.iter().map(|e| e.len().saturating_sub(1)).collect(),
        labels: archive.labels(),
    })
}
