//! Finite-horizon optimal control on reduced models and the receding-horizon
//! loop around them.
//!
//! Horizon costs sum the stage cost over the `p` predicted states
//! `z_{s+1} .. z_{s+p}`; the reference is indexed by absolute sample step.

mod closed_loop;
mod continuous;
mod switched;

pub use closed_loop::{run_closed_loop, ClosedLoopRecord, ClosedLoopRow, LoopModel, LoopOptions, LoopSummary};
pub use continuous::{horizon_cost, horizon_cost_gradient, solve_continuous, ContinuousSolution, GradientOptions};
pub use switched::{solve_switched, SwitchedSolution, DEFAULT_BUDGET};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};

/// Per-step target table; steps past the end repeat the last row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    rows: Vec<Vec<f64>>,
}

impl Reference {
    pub fn table(rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = rows.first().map(Vec::len).ok_or_else(|| Error::invalid("empty reference table"))?;
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::invalid("reference rows differ in width"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("reference table".into()));
        }
        Ok(Reference { rows })
    }

    pub fn constant(values: Vec<f64>) -> Result<Self> {
        Self::table(vec![values])
    }

    /// Single-component `offset + amplitude sin(omega t)` sampled at `t = n h`.
    pub fn sinusoid(offset: f64, amplitude: f64, omega: f64, h: f64, steps: usize) -> Result<Self> {
        Self::table(
            (0..steps.max(1))
                .map(|n| vec![offset + amplitude * (omega * n as f64 * h).sin()])
                .collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.rows[0].len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn at(&self, step: usize) -> &[f64] {
        &self.rows[step.min(self.rows.len() - 1)]
    }
}

/// Weighted quadratic tracking of selected observable components.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCost {
    components: Vec<usize>,
    weights: Vec<f64>,
    reference: Reference,
}

impl StageCost {
    pub fn tracking(components: Vec<usize>, weights: Vec<f64>, reference: Reference) -> Result<Self> {
        if components.is_empty() || components.len() != weights.len() || reference.width() != components.len() {
            return Err(Error::invalid(
                "tracking cost needs matching, non-empty components, weights and reference columns",
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("tracking weights must be finite and non-negative"));
        }
        Ok(StageCost {
            components,
            weights,
            reference,
        })
    }

    pub fn components(&self) -> &[usize] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn reference(&self) -> &Reference {
        &self.reference
    }

    pub fn check_dimension(&self, q: usize) -> Result<()> {
        match self.components.iter().find(|c| **c >= q) {
            Some(c) => Err(Error::invalid(format!("tracked component {c} exceeds observable dimension {q}"))),
            None => Ok(()),
        }
    }

    pub fn eval_observable(&self, z: &[f64], step: usize) -> f64 {
        let target = self.reference.at(step);
        self.components
            .iter()
            .zip(&self.weights)
            .zip(target)
            .map(|((&c, &w), &r)| w * (z[c] - r) * (z[c] - r))
            .sum()
    }

    /// Cost of a lifted state, read through the coordinate positions.
    pub fn eval_lifted(&self, dict: &Dictionary, psi: &DVector<f64>, step: usize) -> f64 {
        let offset = coordinate_offset(dict);
        let target = self.reference.at(step);
        self.components
            .iter()
            .zip(&self.weights)
            .zip(target)
            .map(|((&c, &w), &r)| {
                let d = psi[offset + c] - r;
                w * d * d
            })
            .sum()
    }

    /// Adds the gradient of [`StageCost::eval_lifted`] to `out`.
    pub fn add_gradient_lifted(&self, dict: &Dictionary, psi: &DVector<f64>, step: usize, out: &mut DVector<f64>) {
        let offset = coordinate_offset(dict);
        let target = self.reference.at(step);
        for ((&c, &w), &r) in self.components.iter().zip(&self.weights).zip(target) {
            out[offset + c] += 2.0 * w * (psi[offset + c] - r);
        }
    }
}

fn coordinate_offset(dict: &Dictionary) -> usize {
    dict.coordinate_positions().map_or(0, |r| r.start)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Admissible {
    Labels { labels: Vec<f64> },
    Interval { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub horizon: usize,
    pub cost: StageCost,
    pub admissible: Admissible,
    pub h: f64,
}

impl MpcProblem {
    pub fn new(horizon: usize, cost: StageCost, admissible: Admissible, h: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("prediction horizon must be at least 1"));
        }
        match &admissible {
            Admissible::Labels { labels } if labels.is_empty() => {
                return Err(Error::invalid("admissible label set is empty"))
            }
            Admissible::Interval { lo, hi } if !(lo <= hi) => {
                return Err(Error::invalid(format!("control bounds [{lo}, {hi}] are inconsistent")))
            }
            _ => {}
        }
        Ok(MpcProblem {
            horizon,
            cost,
            admissible,
            h,
        })
    }

    fn check_step(&self, model_h: f64) -> Result<()> {
        if (self.h - model_h).abs() > 1e-12 * model_h.abs() {
            return Err(Error::Incompatible(format!(
                "problem step {} differs from model step {model_h}",
                self.h
            )));
        }
        Ok(())
    }
}
