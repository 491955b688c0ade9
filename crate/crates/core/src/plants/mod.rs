//! Ground-truth dynamical systems and snapshot data handling.

mod archive;
mod burgers;
mod collect;
mod linear;
mod ode;

pub use archive::{ingest, ArchiveMetadata, Episode, SnapshotArchive, METADATA_FILE};
pub use burgers::{BurgersConfig, BurgersPlant, Profile, ShapeFunction};
pub use collect::{collect, run_episode, Schedule};
pub use linear::LinearPlant;
pub use ode::OdePlant;

use crate::error::Result;

/// A sampled dynamical system `y_{i+1} = Phi(y_i, u_i)` with the control held
/// constant over each sample interval.
pub trait Plant {
    /// Sample step.
    fn h(&self) -> f64;

    /// Number of observables produced by [`Plant::observe`].
    fn q(&self) -> usize;

    fn state_dim(&self) -> usize;

    /// Advances exactly one sample interval.
    fn step(&self, state: &[f64], u: f64) -> Result<Vec<f64>>;

    fn observe(&self, state: &[f64]) -> Vec<f64>;

    /// Admissible control interval.
    fn control_bounds(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

/// Classical fourth-order Runge-Kutta over `substeps` equal substeps.
pub(crate) fn rk4_integrate<F>(y: &[f64], duration: f64, substeps: usize, mut rhs: F) -> Vec<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = y.len();
    let dt = duration / substeps as f64;
    let mut state = y.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for _ in 0..substeps {
        rhs(&state, &mut k1);
        for i in 0..n {
            tmp[i] = state[i] + 0.5 * dt * k1[i];
        }
        rhs(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = state[i] + 0.5 * dt * k2[i];
        }
        rhs(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = state[i] + dt * k3[i];
        }
        rhs(&tmp, &mut k4);
        for i in 0..n {
            state[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    state
}
