use std::io::Write;
use std::time::Instant;

use super::{solve_continuous, solve_switched, Admissible, GradientOptions, MpcProblem, DEFAULT_BUDGET};
use crate::error::{Error, Result};
use crate::krom::{LocalizedKrom, PiecewiseBilinear, SwitchedKrom};
use crate::plants::Plant;

/// Reduced model driving the loop.
#[derive(Debug, Clone, Copy)]
pub enum LoopModel<'a> {
    Switched(&'a SwitchedKrom),
    Continuous(&'a LocalizedKrom),
}

impl LoopModel<'_> {
    fn h(&self) -> f64 {
        match self {
            LoopModel::Switched(s) => s.h(),
            LoopModel::Continuous(m) => m.h(),
        }
    }

    fn q(&self) -> usize {
        match self {
            LoopModel::Switched(s) => s.dictionary().q(),
            LoopModel::Continuous(m) => m.dictionary().q(),
        }
    }

    /// One-step observable prediction under the control currently applied.
    fn predict(&self, z: &[f64], u: f64) -> Result<Vec<f64>> {
        let next = match self {
            LoopModel::Switched(s) => {
                let psi = s.dictionary().lift(z)?;
                s.dictionary().project(&s.step_lifted(&psi, u)?)?
            }
            LoopModel::Continuous(m) => {
                let psi = m.dictionary().lift(z)?;
                m.dictionary().project(&m.step_lifted(&psi, u)?)?
            }
        };
        Ok(next.as_slice().to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOptions {
    /// Solve from the model's one-step prediction instead of the measurement.
    pub latency_compensation: bool,
    /// Control applied before the first solution is available.
    pub initial_control: f64,
    /// Keep the previous control when a solve fails instead of aborting.
    pub hold_on_failure: bool,
    pub gradient: GradientOptions,
    pub budget: u128,
    /// Record solve wall-time; when off, `solve_ms` is zero.
    pub record_timing: bool,
}

impl Default for LoopOptions {
    fn default() -> Self {
        LoopOptions {
            latency_compensation: true,
            initial_control: 0.0,
            hold_on_failure: true,
            gradient: GradientOptions::default(),
            budget: DEFAULT_BUDGET,
            record_timing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRow {
    pub step: usize,
    /// Time at which `u_applied` starts acting on the plant.
    pub t: f64,
    pub u_applied: f64,
    pub cost_stage: f64,
    pub solve_ms: f64,
    /// Plant observable at `t`.
    pub z: Vec<f64>,
    /// Model-predicted observable at `t` (the solve's initial condition).
    pub zhat: Vec<f64>,
    /// Full horizon solution; its first entry is `u_applied`.
    pub horizon: Vec<f64>,
    pub solver_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRecord {
    pub q: usize,
    pub rows: Vec<ClosedLoopRow>,
    /// Number of plant steps taken.
    pub plant_steps: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LoopSummary {
    pub mean_tracking_error: f64,
    pub max_tracking_error: f64,
    pub saturation_fraction: f64,
    pub solver_failures: usize,
}

impl ClosedLoopRecord {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = ["step", "t", "u_applied", "cost_stage", "solve_ms"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=self.q).map(|i| format!("z{i}")));
        header.extend((1..=self.q).map(|i| format!("zhat{i}")));
        wtr.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.step.to_string(),
                r.t.to_string(),
                r.u_applied.to_string(),
                r.cost_stage.to_string(),
                r.solve_ms.to_string(),
            ];
            rec.extend(r.z.iter().map(|v| v.to_string()));
            rec.extend(r.zhat.iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Tracking errors of the tracked components against the reference, and
    /// the fraction of applied controls sitting on a bound.
    pub fn summary(&self, prob: &MpcProblem) -> LoopSummary {
        let cost = &prob.cost;
        let mut errors = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            let step = (r.t / prob.h).round() as usize;
            let target = cost.reference().at(step);
            let e = cost
                .components()
                .iter()
                .zip(target)
                .map(|(&c, &t)| (r.z[c] - t).abs())
                .fold(0.0, f64::max);
            errors.push(e);
        }
        let saturated = match &prob.admissible {
            Admissible::Interval { lo, hi } => self
                .rows
                .iter()
                .filter(|r| (r.u_applied - lo).abs() <= 1e-9 || (r.u_applied - hi).abs() <= 1e-9)
                .count(),
            Admissible::Labels { .. } => 0,
        };
        let n = self.rows.len().max(1) as f64;
        LoopSummary {
            mean_tracking_error: errors.iter().sum::<f64>() / n,
            max_tracking_error: errors.iter().copied().fold(0.0, f64::max),
            saturation_fraction: saturated as f64 / n,
            solver_failures: self.rows.iter().filter(|r| !r.solver_ok).count(),
        }
    }
}

/// Receding-horizon loop: measure, predict one step ahead with the active
/// control, solve on the horizon, then apply the first control entry for one
/// plant step. Warm starts shift the previous solution and repeat its tail.
pub fn run_closed_loop<P: Plant + ?Sized>(
    plant: &P,
    initial_state: &[f64],
    model: LoopModel<'_>,
    prob: &MpcProblem,
    steps: usize,
    opts: &LoopOptions,
) -> Result<ClosedLoopRecord> {
    if (plant.h() - model.h()).abs() > 1e-12 * model.h() {
        return Err(Error::Incompatible(format!(
            "plant step {} differs from model step {}",
            plant.h(),
            model.h()
        )));
    }
    if plant.q() != model.q() {
        return Err(Error::Incompatible(format!(
            "plant has {} observables, model expects {}",
            plant.q(),
            model.q()
        )));
    }
    let p = prob.horizon;
    let mut state = initial_state.to_vec();
    let mut active = opts.initial_control;
    let mut warm = vec![active; p];
    let mut rows = Vec::with_capacity(steps);
    let mut plant_steps = 0;

    for i in 0..steps {
        let z_i = plant.observe(&state);
        let (z_start, start_step) = if opts.latency_compensation {
            (model.predict(&z_i, active)?, i + 1)
        } else {
            (z_i.clone(), i)
        };

        let clock = Instant::now();
        let solved = match model {
            LoopModel::Switched(s) => {
                solve_switched(s, &z_start, prob, start_step, opts.budget).map(|sol| sol.sequence)
            }
            LoopModel::Continuous(m) => {
                solve_continuous(m, &z_start, prob, start_step, &warm, &opts.gradient).map(|sol| sol.u)
            }
        };
        let solve_ms = if opts.record_timing {
            clock.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        let (horizon, solver_ok) = match solved {
            Ok(u) => (u, true),
            Err(e) if opts.hold_on_failure => {
                log::warn!("solve at step {i} failed, holding control {active}: {e}");
                (vec![active; p], false)
            }
            Err(e) => return Err(e),
        };

        let (t_apply, z_row) = if opts.latency_compensation {
            // the active control runs while the solve is in progress
            state = plant.step(&state, active).map_err(|e| Error::PlantStep {
                episode: 0,
                step: i,
                source: Box::new(e),
            })?;
            plant_steps += 1;
            ((i + 1) as f64 * plant.h(), plant.observe(&state))
        } else {
            (i as f64 * plant.h(), z_i)
        };

        active = horizon[0];
        if !opts.latency_compensation {
            state = plant.step(&state, active).map_err(|e| Error::PlantStep {
                episode: 0,
                step: i,
                source: Box::new(e),
            })?;
            plant_steps += 1;
        }

        warm = horizon[1..].to_vec();
        warm.push(*horizon.last().expect("horizon >= 1"));

        rows.push(ClosedLoopRow {
            step: i,
            t: t_apply,
            u_applied: active,
            cost_stage: prob.cost.eval_observable(&z_row, start_step),
            solve_ms,
            z: z_row,
            zhat: z_start,
            horizon,
            solver_ok,
        });
    }

    Ok(ClosedLoopRecord {
        q: plant.q(),
        rows,
        plant_steps,
    })
}
