use serde::{Deserialize, Serialize};

use super::{rk4_integrate, Plant};
use crate::error::{Error, Result};

/// Two-dimensional polynomial system
/// `y1' = mu y1`, `y2' = lambda (y2 - y1^2) + u^chi`.
///
/// With `chi = 1` the right-hand side is linear in `u`; larger exponents make
/// the control enter nonlinearly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdePlant {
    pub mu: f64,
    pub lambda: f64,
    pub chi: u32,
    pub h: f64,
    /// RK4 substeps per sample interval.
    pub substeps: usize,
}

impl Default for OdePlant {
    fn default() -> Self {
        OdePlant {
            mu: -0.1,
            lambda: -1.0,
            chi: 1,
            h: 0.04,
            substeps: 4,
        }
    }
}

impl OdePlant {
    pub fn validate(&self) -> Result<()> {
        if self.chi < 1 {
            return Err(Error::invalid("control exponent chi must be >= 1"));
        }
        if !(self.h > 0.0) || self.substeps == 0 {
            return Err(Error::invalid("ODE plant needs h > 0 and at least one substep"));
        }
        if !self.mu.is_finite() || !self.lambda.is_finite() {
            return Err(Error::NonFinite("ODE parameters".into()));
        }
        Ok(())
    }

    pub fn rhs(&self, y: &[f64], u: f64, dy: &mut [f64]) {
        dy[0] = self.mu * y[0];
        dy[1] = self.lambda * (y[1] - y[0] * y[0]) + u.powi(self.chi as i32);
    }
}

impl Plant for OdePlant {
    fn h(&self) -> f64 {
        self.h
    }

    fn q(&self) -> usize {
        2
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn step(&self, state: &[f64], u: f64) -> Result<Vec<f64>> {
        if state.len() != 2 {
            return Err(Error::ShapeMismatch {
                what: "ODE state",
                expected: 2,
                found: state.len(),
            });
        }
        if !u.is_finite() {
            return Err(Error::NonFinite("control".into()));
        }
        let next = rk4_integrate(state, self.h, self.substeps, |y, dy| self.rhs(y, u, dy));
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ODE state (blow-up)".into()));
        }
        Ok(next)
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        state.to_vec()
    }
}
