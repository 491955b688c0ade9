#![allow(dead_code)]

use krom_core::edmd::{fit, FitOptions, KoopmanModel, SnapshotSet};
use krom_core::plants::{OdePlant, Plant};
use krom_core::Dictionary;
use nalgebra::DMatrix;

/// Scattered initial states on a 7 x 7 grid over [-2, 2]^2, jittered so no
/// two samples share a coordinate.
pub fn sample_states() -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    for i in 0..7 {
        for j in 0..7 {
            let a = -2.0 + 4.0 * i as f64 / 6.0 + 0.013 * j as f64;
            let b = -2.0 + 4.0 * j as f64 / 6.0 + 0.007 * i as f64;
            out.push([a, b]);
        }
    }
    out
}

/// One-step pairs of `plant` at constant `u`, started from [`sample_states`].
pub fn one_step_pairs(plant: &dyn Plant, u: f64) -> SnapshotSet {
    let starts = sample_states();
    let m = starts.len();
    let mut z = DMatrix::zeros(2, m);
    let mut zn = DMatrix::zeros(2, m);
    for (c, s) in starts.iter().enumerate() {
        let next = plant.step(s, u).unwrap();
        z[(0, c)] = s[0];
        z[(1, c)] = s[1];
        zn[(0, c)] = next[0];
        zn[(1, c)] = next[1];
    }
    SnapshotSet::new(z, zn, u, plant.h()).unwrap()
}

pub fn fit_ode(plant: &OdePlant, u: f64) -> KoopmanModel {
    let dict = Dictionary::new(2, 2).unwrap();
    fit(&dict, &one_step_pairs(plant, u), FitOptions::default()).unwrap()
}

/// Time-`h` Koopman matrix of `y1' = mu y1, y2' = lambda (y2 - y1^2) + c`
/// restricted to span{1, y1, y2, y1^2}, written in the transposed convention
/// (row `i` gives the successor of basis function `i`).
pub fn analytic_transition(mu: f64, lambda: f64, c: f64, h: f64) -> DMatrix<f64> {
    let e1 = (mu * h).exp();
    let e2 = (2.0 * mu * h).exp();
    let el = (lambda * h).exp();
    let mut t = DMatrix::zeros(4, 4);
    t[(0, 0)] = 1.0;
    t[(1, 1)] = e1;
    t[(2, 0)] = c * (el - 1.0) / lambda;
    t[(2, 2)] = el;
    t[(2, 3)] = -lambda * (e2 - el) / (2.0 * mu - lambda);
    t[(3, 3)] = e2;
    t
}

/// Fine-step RK4 reference for the ODE plant under a piecewise constant
/// control, independent of the plant's own integrator.
pub fn ode_reference(plant: &OdePlant, y0: [f64; 2], controls: &[f64], substeps: usize) -> DMatrix<f64> {
    let rhs = |y: [f64; 2], u: f64| {
        [
            plant.mu * y[0],
            plant.lambda * (y[1] - y[0] * y[0]) + u.powi(plant.chi as i32),
        ]
    };
    let dt = plant.h / substeps as f64;
    let mut out = DMatrix::zeros(2, controls.len() + 1);
    let mut y = y0;
    out[(0, 0)] = y[0];
    out[(1, 0)] = y[1];
    for (i, &u) in controls.iter().enumerate() {
        for _ in 0..substeps {
            let k1 = rhs(y, u);
            let k2 = rhs([y[0] + 0.5 * dt * k1[0], y[1] + 0.5 * dt * k1[1]], u);
            let k3 = rhs([y[0] + 0.5 * dt * k2[0], y[1] + 0.5 * dt * k2[1]], u);
            let k4 = rhs([y[0] + dt * k3[0], y[1] + dt * k3[1]], u);
            for d in 0..2 {
                y[d] += dt / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
            }
        }
        out[(0, i + 1)] = y[0];
        out[(1, i + 1)] = y[1];
    }
    out
}

/// Naive cost of a label sequence, rolled out step by step in lifted space.
pub fn brute_force_cost(
    models: &[&KoopmanModel],
    z0: &[f64],
    seq: &[usize],
    target: impl Fn(usize) -> Vec<(usize, f64, f64)>,
    start_step: usize,
) -> f64 {
    let dict = models[0].dictionary();
    let mut psi = dict.lift(z0).unwrap();
    let mut total = 0.0;
    for (j, &ix) in seq.iter().enumerate() {
        psi = models[ix].transition() * &psi;
        let z = dict.project(&psi).unwrap();
        for (comp, w, r) in target(start_step + j + 1) {
            total += w * (z[comp] - r).powi(2);
        }
    }
    total
}

/// All sequences over `n` symbols of length `p`, in lexicographic order.
pub fn all_sequences(n: usize, p: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..p {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..n).map(move |c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
    }
    out
}
