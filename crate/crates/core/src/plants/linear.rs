use nalgebra::{DMatrix, DVector};

use super::{rk4_integrate, Plant};
use crate::error::{Error, Result};

/// Linear system `x' = A x + b u` observed through `z = C x` (`C = I` unless
/// set).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlant {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: Option<DMatrix<f64>>,
    h: f64,
    substeps: usize,
}

impl LinearPlant {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, h: f64, substeps: usize) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.len() || a.nrows() == 0 {
            return Err(Error::invalid("linear plant needs square A matching b"));
        }
        if !(h > 0.0) || substeps == 0 {
            return Err(Error::invalid("linear plant needs h > 0 and at least one substep"));
        }
        Ok(LinearPlant {
            a,
            b,
            c: None,
            h,
            substeps,
        })
    }

    pub fn with_observation(mut self, c: DMatrix<f64>) -> Result<Self> {
        if c.ncols() != self.b.len() || c.nrows() == 0 {
            return Err(Error::ShapeMismatch {
                what: "observation matrix columns",
                expected: self.b.len(),
                found: c.ncols(),
            });
        }
        self.c = Some(c);
        Ok(self)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
}

impl Plant for LinearPlant {
    fn h(&self) -> f64 {
        self.h
    }

    fn q(&self) -> usize {
        self.c.as_ref().map_or(self.b.len(), |c| c.nrows())
    }

    fn state_dim(&self) -> usize {
        self.b.len()
    }

    fn step(&self, state: &[f64], u: f64) -> Result<Vec<f64>> {
        let n = self.b.len();
        if state.len() != n {
            return Err(Error::ShapeMismatch {
                what: "linear plant state",
                expected: n,
                found: state.len(),
            });
        }
        let next = rk4_integrate(state, self.h, self.substeps, |y, dy| {
            for i in 0..n {
                dy[i] = self.b[i] * u + (0..n).map(|j| self.a[(i, j)] * y[j]).sum::<f64>();
            }
        });
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear plant state".into()));
        }
        Ok(next)
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        match &self.c {
            Some(c) => (c * DVector::from_column_slice(state)).as_slice().to_vec(),
            None => state.to_vec(),
        }
    }
}
