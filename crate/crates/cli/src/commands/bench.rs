use std::hint::black_box;
use std::time::Instant;

use krom_core::krom::PiecewiseBilinear;
use krom_core::plants::ingest;
use krom_core::{Dictionary, SwitchedKrom};
use nalgebra::DVector;
use serde::Serialize;

use super::{data_dir, initial_states, load_krom, load_label_models, sim_plant, write_json};
use crate::config::{ExperimentConfig, ModelKind, PlantSpec, MIN_BENCH_STEPS};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub steps: usize,
    pub u: f64,
    /// Median wall-time of one plant sample step, seconds.
    pub plant_median_s: f64,
    /// Median wall-time of lift, lifted step and projection, seconds.
    pub model_median_s: f64,
    pub ratio: f64,
    /// False when the "plant" is a replayed archive: its cost is a memory
    /// read, not a simulation.
    pub comparable: bool,
    pub note: String,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times plant steps against reduced-model steps over the same control.
pub fn bench(cfg: &ExperimentConfig) -> CliResult<BenchReport> {
    let steps = cfg.bench.steps;
    if steps < MIN_BENCH_STEPS {
        return Err(CliError::config(format!("bench.steps: at least {MIN_BENCH_STEPS} steps are required")));
    }
    let labels = {
        let mut l = cfg.data.labels.clone();
        l.sort_by(f64::total_cmp);
        l
    };
    let u = cfg.bench.u.unwrap_or(match cfg.model.kind {
        ModelKind::Switched => labels[0],
        _ => 0.5 * (labels[0] + labels[labels.len() - 1]),
    });

    let switched = match cfg.model.kind {
        ModelKind::Switched => Some(SwitchedKrom::new(load_label_models(cfg)?)?),
        _ => None,
    };
    let krom = match &switched {
        None => Some(load_krom(cfg)?),
        Some(_) => None,
    };
    let dict: &Dictionary = match (&switched, &krom) {
        (Some(s), _) => s.dictionary(),
        (_, Some(m)) => m.dictionary(),
        _ => unreachable!(),
    };
    let step = |psi: &DVector<f64>| -> CliResult<DVector<f64>> {
        Ok(match (&switched, &krom) {
            (Some(s), _) => s.step_lifted(psi, u)?,
            (_, Some(m)) => m.step_lifted(psi, u)?,
            _ => unreachable!(),
        })
    };

    let (plant_times, observed, comparable) = match &cfg.plant {
        PlantSpec::Replay(_) => {
            let archive = ingest(&data_dir(cfg))?;
            let columns: Vec<Vec<f64>> = archive
                .episodes
                .iter()
                .flat_map(|ep| ep.z.column_iter().map(|c| c.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>())
                .collect();
            if columns.is_empty() {
                return Err(CliError::Data("replay archive is empty".into()));
            }
            let mut times = Vec::with_capacity(steps);
            for i in 0..steps {
                let clock = Instant::now();
                black_box(columns[i % columns.len()].clone());
                times.push(clock.elapsed().as_secs_f64());
            }
            (times, columns, false)
        }
        _ => {
            let plant = sim_plant(cfg, "bench")?;
            let specs: Vec<_> = cfg.bench.initial.iter().cloned().collect();
            let mut state = initial_states(cfg, &plant, &specs, "bench.initial")?
                .into_iter()
                .next()
                .ok_or_else(|| CliError::config("bench.initial: no initial state available"))?;
            let p = plant.as_plant();
            let mut observed = vec![p.observe(&state)];
            let mut times = Vec::with_capacity(steps);
            for _ in 0..steps {
                let clock = Instant::now();
                state = black_box(p.step(&state, u)?);
                observed.push(black_box(p.observe(&state)));
                times.push(clock.elapsed().as_secs_f64());
            }
            (times, observed, true)
        }
    };

    // the model steps from the same observed states, so it cannot drift
    let mut times = Vec::with_capacity(steps);
    for i in 0..steps {
        let z = &observed[i % observed.len()];
        let clock = Instant::now();
        let psi = dict.lift(z)?;
        let next = step(&psi)?;
        black_box(dict.project(&next)?);
        times.push(clock.elapsed().as_secs_f64());
    }

    let plant_median_s = median(plant_times);
    let model_median_s = median(times);
    let report = BenchReport {
        steps,
        u,
        plant_median_s,
        model_median_s,
        ratio: plant_median_s / model_median_s,
        comparable,
        note: if comparable {
            "plant simulation vs lift + step + project".into()
        } else {
            "replay cost is a memory read; the ratio is not comparable to a simulated plant".into()
        },
    };
    write_json(&cfg.output.join("bench.json"), &report)?;
    Ok(report)
}
