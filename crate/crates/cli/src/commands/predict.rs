use krom_core::krom::{relative_error, rollout, switched_rollout, PiecewiseBilinear};
use krom_core::plants::{ingest, run_episode};
use krom_core::{Dictionary, SwitchedKrom};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{data_dir, initial_states, load_krom, load_label_models, nan_max, relative_l2, sim_plant, write_atomic, write_json};
use crate::config::{steps_for, ExperimentConfig, ModelKind, PlantSpec};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentError {
    pub component: usize,
    /// Pointwise relative error; samples with a zero reference are skipped.
    pub max: Option<f64>,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeReport {
    pub episode: usize,
    pub steps: usize,
    pub eps_rel: Vec<ComponentError>,
    /// `||Z - Zhat|| / ||Z||` over the predicted samples of the free rollout.
    pub rollout_rel_l2: f64,
    /// Same norm ratio for one-step predictions from the plant's own samples.
    pub one_step_rel_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictReport {
    pub kind: ModelKind,
    pub episodes: Vec<EpisodeReport>,
    pub max_rollout_rel_l2: f64,
    pub max_one_step_rel_l2: f64,
}

enum Model {
    Switched(SwitchedKrom),
    Interpolating(krom_core::LocalizedKrom),
}

impl Model {
    fn dictionary(&self) -> &Dictionary {
        match self {
            Model::Switched(s) => s.dictionary(),
            Model::Interpolating(m) => m.dictionary(),
        }
    }

    fn rollout(&self, z0: &[f64], controls: &[f64]) -> CliResult<DMatrix<f64>> {
        Ok(match self {
            Model::Switched(s) => switched_rollout(s, z0, controls)?,
            Model::Interpolating(m) => rollout(m, z0, controls)?,
        })
    }

    fn one_step(&self, z: &[f64], u: f64) -> CliResult<DVector<f64>> {
        let dict = self.dictionary();
        let psi = dict.lift(z)?;
        let next = match self {
            Model::Switched(s) => s.step_lifted(&psi, u)?,
            Model::Interpolating(m) => m.step_lifted(&psi, u)?,
        };
        Ok(dict.project(&next)?)
    }
}

/// Runs the plant and the reduced model side by side under the configured
/// signal (or, for replay data, the recorded controls of the held-out
/// episodes) and writes the paired trajectories with their error report.
pub fn predict(cfg: &ExperimentConfig) -> CliResult<PredictReport> {
    let model = match cfg.model.kind {
        ModelKind::Switched => Model::Switched(SwitchedKrom::new(load_label_models(cfg)?)?),
        _ => Model::Interpolating(load_krom(cfg)?),
    };

    let runs: Vec<(DMatrix<f64>, Vec<f64>, f64)> = match &cfg.plant {
        PlantSpec::Replay(_) => {
            let archive = ingest(&data_dir(cfg))?;
            let episodes = if cfg.data.held_out > 0 {
                archive.split_episodes(cfg.data.held_out)?.1.episodes
            } else {
                archive.episodes
            };
            episodes
                .into_iter()
                .map(|ep| {
                    let n = ep.len().saturating_sub(1);
                    (ep.z, ep.u[..n].to_vec(), archive.h)
                })
                .collect()
        }
        _ => {
            let plant = sim_plant(cfg, "predict")?;
            let spec = cfg
                .predict
                .as_ref()
                .ok_or_else(|| CliError::config("predict: section missing"))?;
            let h = plant.as_plant().h();
            let steps = steps_for(spec.duration, h, "predict.duration")?;
            let signal = spec
                .signal
                .as_ref()
                .ok_or_else(|| CliError::config("predict.signal: a control signal is required"))?;
            let controls = signal.sample(steps, h)?;
            initial_states(cfg, &plant, &spec.initials, "predict.initials")?
                .iter()
                .enumerate()
                .map(|(i, init)| {
                    let ep = run_episode(plant.as_plant(), i, init, &controls)?;
                    Ok((ep.z, controls.clone(), h))
                })
                .collect::<CliResult<_>>()?
        }
    };

    let q = model.dictionary().q();
    let mut header: Vec<String> = ["episode", "step", "t", "u"].iter().map(|s| s.to_string()).collect();
    for prefix in ["z", "zhat", "zpred"] {
        header.extend((1..=q).map(|i| format!("{prefix}{i}")));
    }
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(&header)?;

    let mut episodes = Vec::with_capacity(runs.len());
    for (e, (z, controls, h)) in runs.iter().enumerate() {
        if z.nrows() != q {
            return Err(CliError::Data(format!("episode {e} has {} observables, model expects {q}", z.nrows())));
        }
        if controls.is_empty() {
            return Err(CliError::Data(format!("episode {e} has no control steps")));
        }
        let z0: Vec<f64> = z.column(0).iter().copied().collect();
        let zhat = model.rollout(&z0, controls)?;
        let mut zpred = z.clone();
        for (i, &u) in controls.iter().enumerate() {
            let zi: Vec<f64> = z.column(i).iter().copied().collect();
            zpred.set_column(i + 1, &model.one_step(&zi, u)?);
        }
        let eps_rel = (0..q)
            .map(|c| {
                let r = relative_error(z, &zhat, c)?;
                Ok(ComponentError {
                    component: c,
                    max: r.max,
                    mean: r.mean,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        episodes.push(EpisodeReport {
            episode: e,
            steps: controls.len(),
            eps_rel,
            rollout_rel_l2: relative_l2(z, &zhat, 1),
            one_step_rel_l2: relative_l2(z, &zpred, 1),
        });

        for j in 0..z.ncols() {
            let u = controls[j.min(controls.len() - 1)];
            let mut rec = vec![e.to_string(), j.to_string(), (j as f64 * h).to_string(), u.to_string()];
            rec.extend(z.column(j).iter().map(|v| v.to_string()));
            rec.extend(zhat.column(j).iter().map(|v| v.to_string()));
            // no one-step prediction exists for the initial sample
            rec.extend(zpred.column(j).iter().map(|v| if j == 0 { String::new() } else { v.to_string() }));
            wtr.write_record(&rec)?;
        }
    }
    let bytes = wtr.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    let dir = cfg.output.join("predict");
    write_atomic(&dir.join("trajectory.csv"), &bytes)?;

    let report = PredictReport {
        kind: cfg.model.kind,
        max_rollout_rel_l2: episodes.iter().map(|e| e.rollout_rel_l2).fold(0.0, nan_max),
        max_one_step_rel_l2: episodes.iter().map(|e| e.one_step_rel_l2).fold(0.0, nan_max),
        episodes,
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}
