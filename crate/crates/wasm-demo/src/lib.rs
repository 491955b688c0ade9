//! Browser bindings. Every export takes plain numbers and returns a JSON
//! string; failures come back as `{"error": "..."}` so the page never has to
//! catch a thrown value.

use krom_core::control::{run_closed_loop, Admissible, LoopModel, LoopOptions, MpcProblem, Reference, StageCost};
use krom_core::edmd::{fit, FitOptions, KoopmanModel, SnapshotSet};
use krom_core::krom::{make_bilinear, relative_error, rollout};
use krom_core::plants::{BurgersConfig, BurgersPlant, OdePlant, Plant, Profile};
use krom_core::{Dictionary, LocalizedKrom};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_STEPS: usize = 5000;

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

fn steps_for(seconds: f64, h: f64) -> Result<usize, String> {
    if !(seconds.is_finite() && seconds > 0.0) {
        return Err("duration must be positive".into());
    }
    let n = (seconds / h).round() as usize;
    if n == 0 || n > MAX_STEPS {
        return Err(format!("duration gives {n} steps; allowed 1..={MAX_STEPS}"));
    }
    Ok(n)
}

fn ode_plant(chi: u32) -> Result<OdePlant, String> {
    let p = OdePlant { chi, ..OdePlant::default() };
    p.validate().map_err(|e| e.to_string())?;
    Ok(p)
}

/// Fits one label on a 7 x 7 grid of one-step pairs over [-2, 2]^2.
fn ode_model(p: &OdePlant, u: f64) -> Result<KoopmanModel, String> {
    let mut z = DMatrix::zeros(2, 49);
    let mut zn = DMatrix::zeros(2, 49);
    for i in 0..7 {
        for j in 0..7 {
            let s = [-2.0 + 4.0 * i as f64 / 6.0, -2.0 + 4.0 * j as f64 / 6.0 + 0.01 * i as f64];
            let next = p.step(&s, u).map_err(|e| e.to_string())?;
            z.set_column(7 * i + j, &DVector::from_row_slice(&s));
            zn.set_column(7 * i + j, &DVector::from_row_slice(&next));
        }
    }
    let set = SnapshotSet::new(z, zn, u, p.h).map_err(|e| e.to_string())?;
    let dict = Dictionary::new(2, 2).map_err(|e| e.to_string())?;
    fit(&dict, &set, FitOptions::default()).map_err(|e| e.to_string())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Serialize)]
pub struct OdeComparison {
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    pub plant: Vec<Vec<f64>>,
    pub model: Vec<Vec<f64>>,
    pub eps_rel: Vec<Option<f64>>,
    pub eps_max: Option<f64>,
}

/// Bilinear model from the labels 0 and 1 against the plant under
/// `offset + amplitude sin(omega t)`, with the relative error of `y2`.
pub fn ode_comparison(chi: u32, offset: f64, amplitude: f64, omega: f64, seconds: f64) -> Result<OdeComparison, String> {
    let p = ode_plant(chi)?;
    let steps = steps_for(seconds, p.h)?;
    let bil = make_bilinear(&ode_model(&p, 0.0)?, &ode_model(&p, 1.0)?).map_err(|e| e.to_string())?;
    let u: Vec<f64> = (0..steps).map(|i| offset + amplitude * (omega * i as f64 * p.h).sin()).collect();
    if u.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err("the signal must stay inside [0, 1]".into());
    }
    let y0 = [1.0, 2.0];
    let model = rollout(&bil, &y0, &u).map_err(|e| e.to_string())?;
    let mut plant = DMatrix::zeros(2, steps + 1);
    let mut y = y0.to_vec();
    plant.set_column(0, &DVector::from_row_slice(&y));
    for (i, &ui) in u.iter().enumerate() {
        y = p.step(&y, ui).map_err(|e| e.to_string())?;
        plant.set_column(i + 1, &DVector::from_row_slice(&y));
    }
    let eps = relative_error(&plant, &model, 1).map_err(|e| e.to_string())?;
    Ok(OdeComparison {
        t: (0..=steps).map(|i| i as f64 * p.h).collect(),
        u,
        plant: rows(&plant),
        model: rows(&model),
        eps_rel: eps.series,
        eps_max: eps.max,
    })
}

#[derive(Debug, Serialize)]
pub struct BurgersRun {
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    /// One velocity profile per sample time.
    pub field: Vec<Vec<f64>>,
    pub observed: Vec<Vec<f64>>,
}

/// Viscous Burgers from a sine profile, forced by `offset + amplitude sin(omega t)`.
pub fn burgers_run(
    profile_amplitude: f64,
    offset: f64,
    amplitude: f64,
    omega: f64,
    seconds: f64,
) -> Result<BurgersRun, String> {
    let plant = BurgersPlant::new(BurgersConfig { n_cells: 128, ..BurgersConfig::default() }).map_err(|e| e.to_string())?;
    let h = plant.h();
    let steps = steps_for(seconds, h)?;
    let mut state = plant
        .initial_state(&Profile::Sine { offset: 0.2, amplitude: profile_amplitude, waves: 1 })
        .map_err(|e| e.to_string())?;
    let u: Vec<f64> = (0..steps).map(|i| offset + amplitude * (omega * i as f64 * h).sin()).collect();
    let mut field = vec![state.clone()];
    let mut observed = vec![plant.observe(&state)];
    for &ui in &u {
        state = plant.step(&state, ui).map_err(|e| e.to_string())?;
        observed.push(plant.observe(&state));
        field.push(state.clone());
    }
    Ok(BurgersRun {
        x: plant.grid(),
        t: (0..=steps).map(|i| i as f64 * h).collect(),
        u,
        field,
        observed,
    })
}

#[derive(Debug, Serialize)]
pub struct MpcRun {
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub reference: Vec<f64>,
    pub mean_tracking_error: f64,
    pub solver_failures: usize,
}

/// Tracks `offset + amplitude sin(omega t)` in `y2` with `u` in [-1, 1].
pub fn ode_mpc(offset: f64, amplitude: f64, omega: f64, horizon: usize, seconds: f64) -> Result<MpcRun, String> {
    let p = ode_plant(1)?;
    let steps = steps_for(seconds, p.h)?;
    if !(1..=40).contains(&horizon) {
        return Err("horizon must be in 1..=40".into());
    }
    let m = LocalizedKrom::from_models(&[ode_model(&p, -1.0)?, ode_model(&p, 1.0)?]).map_err(|e| e.to_string())?;
    let reference = Reference::sinusoid(offset, amplitude, omega, p.h, steps + horizon + 2).map_err(|e| e.to_string())?;
    let cost = StageCost::tracking(vec![1], vec![1.0], reference.clone()).map_err(|e| e.to_string())?;
    let prob = MpcProblem::new(horizon, cost, Admissible::Interval { lo: -1.0, hi: 1.0 }, p.h).map_err(|e| e.to_string())?;
    let opts = LoopOptions { record_timing: false, ..LoopOptions::default() };
    let record =
        run_closed_loop(&p, &[1.0, 2.0], LoopModel::Continuous(&m), &prob, steps, &opts).map_err(|e| e.to_string())?;
    let summary = record.summary(&prob);
    Ok(MpcRun {
        t: record.rows.iter().map(|r| r.t).collect(),
        u: record.rows.iter().map(|r| r.u_applied).collect(),
        y1: record.rows.iter().map(|r| r.z[0]).collect(),
        y2: record.rows.iter().map(|r| r.z[1]).collect(),
        reference: record.rows.iter().map(|r| reference.at(r.step)[0]).collect(),
        mean_tracking_error: summary.mean_tracking_error,
        solver_failures: summary.solver_failures,
    })
}

#[wasm_bindgen(js_name = odeComparison)]
pub fn ode_comparison_json(chi: u32, offset: f64, amplitude: f64, omega: f64, seconds: f64) -> String {
    to_json(ode_comparison(chi, offset, amplitude, omega, seconds))
}

#[wasm_bindgen(js_name = burgersRun)]
pub fn burgers_run_json(profile_amplitude: f64, offset: f64, amplitude: f64, omega: f64, seconds: f64) -> String {
    to_json(burgers_run(profile_amplitude, offset, amplitude, omega, seconds))
}

#[wasm_bindgen(js_name = odeMpc)]
pub fn ode_mpc_json(offset: f64, amplitude: f64, omega: f64, horizon: usize, seconds: f64) -> String {
    to_json(ode_mpc(offset, amplitude, omega, horizon, seconds))
}
