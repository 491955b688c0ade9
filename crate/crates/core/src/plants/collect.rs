use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Episode, Plant, SnapshotArchive};
use crate::error::{Error, Result};

/// Control excitation used while recording data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant { u: f64 },
    /// Cycles through `labels`, holding each for `dwell_steps` steps.
    Cycle { labels: Vec<f64>, dwell_steps: usize },
    /// Random label order and random dwell times in `[min_dwell, max_dwell]`.
    Random {
        labels: Vec<f64>,
        min_dwell: usize,
        max_dwell: usize,
    },
}

impl Schedule {
    /// Controls referenced by the schedule.
    pub fn labels(&self) -> Vec<f64> {
        match self {
            Schedule::Constant { u } => vec![*u],
            Schedule::Cycle { labels, .. } | Schedule::Random { labels, .. } => labels.clone(),
        }
    }

    pub fn controls<R: Rng>(&self, steps: usize, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Schedule::Constant { u } => Ok(vec![*u; steps]),
            Schedule::Cycle { labels, dwell_steps } => {
                if labels.is_empty() || *dwell_steps == 0 {
                    return Err(Error::invalid("cycle schedule needs labels and a positive dwell"));
                }
                Ok((0..steps).map(|i| labels[(i / dwell_steps) % labels.len()]).collect())
            }
            Schedule::Random {
                labels,
                min_dwell,
                max_dwell,
            } => {
                if labels.is_empty() || *min_dwell == 0 || min_dwell > max_dwell {
                    return Err(Error::invalid(
                        "random schedule needs labels and 0 < min_dwell <= max_dwell",
                    ));
                }
                let mut out = Vec::with_capacity(steps);
                while out.len() < steps {
                    let u = labels[rng.random_range(0..labels.len())];
                    let dwell = rng.random_range(*min_dwell..=*max_dwell);
                    out.extend(std::iter::repeat_n(u, dwell.min(steps - out.len())));
                }
                Ok(out)
            }
        }
    }
}

/// Simulates one episode. Row `j` of the result pairs the observable at
/// `t_j` with `controls[j]`; the final row repeats the last control.
pub fn run_episode<P: Plant + ?Sized>(
    plant: &P,
    id: usize,
    initial: &[f64],
    controls: &[f64],
) -> Result<Episode> {
    if controls.is_empty() {
        return Err(Error::invalid("episode needs at least one control step"));
    }
    if initial.len() != plant.state_dim() {
        return Err(Error::ShapeMismatch {
            what: "initial state",
            expected: plant.state_dim(),
            found: initial.len(),
        });
    }
    let (lo, hi) = plant.control_bounds();
    if let Some(u) = controls.iter().find(|u| !(lo..=hi).contains(*u)) {
        return Err(Error::OutOfRange { u: *u, lo, hi });
    }
    let q = plant.q();
    let n = controls.len() + 1;
    let mut z = DMatrix::zeros(q, n);
    let mut state = initial.to_vec();
    for (j, v) in plant.observe(&state).into_iter().enumerate() {
        z[(j, 0)] = v;
    }
    for (step, &u) in controls.iter().enumerate() {
        state = plant.step(&state, u).map_err(|e| Error::PlantStep {
            episode: id,
            step,
            source: Box::new(e),
        })?;
        for (j, v) in plant.observe(&state).into_iter().enumerate() {
            z[(j, step + 1)] = v;
        }
    }
    let mut u = controls.to_vec();
    u.push(*controls.last().expect("non-empty"));
    Ok(Episode {
        id,
        t: (0..n).map(|i| i as f64 * plant.h()).collect(),
        u,
        z,
    })
}

/// Records one episode per `(initial state, control sequence)` run.
pub fn collect<P: Plant + ?Sized>(plant: &P, runs: &[(Vec<f64>, Vec<f64>)]) -> Result<SnapshotArchive> {
    let episodes = runs
        .iter()
        .enumerate()
        .map(|(id, (init, controls))| run_episode(plant, id, init, controls))
        .collect::<Result<Vec<_>>>()?;
    SnapshotArchive::new(plant.q(), plant.h(), episodes)
}
