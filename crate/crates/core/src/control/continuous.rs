use nalgebra::DVector;

use super::{Admissible, MpcProblem, StageCost};
use crate::error::{Error, Result};
use crate::krom::PiecewiseBilinear;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientOptions {
    /// Stop when the projected-gradient norm falls below this.
    pub gtol: f64,
    pub max_iter: usize,
    pub backtrack: f64,
    pub initial_step: f64,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for GradientOptions {
    fn default() -> Self {
        GradientOptions {
            gtol: 1e-8,
            max_iter: 500,
            backtrack: 0.5,
            initial_step: 1.0,
            armijo: 1e-4,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSolution {
    pub u: Vec<f64>,
    pub cost: f64,
    /// Accepted descent steps.
    pub iterations: usize,
    pub projected_gradient_norm: f64,
    pub converged: bool,
    /// Cost after each accepted step, starting with the warm start.
    pub cost_history: Vec<f64>,
}

/// Sum of stage costs over the predicted states, starting from the lifted
/// state `psi0` at absolute step `start_step`.
pub fn horizon_cost<M: PiecewiseBilinear + ?Sized>(
    model: &M,
    psi0: &DVector<f64>,
    u: &[f64],
    cost: &StageCost,
    start_step: usize,
) -> Result<f64> {
    let dict = model.dictionary();
    let mut psi = psi0.clone();
    let mut total = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        psi = model.step_lifted(&psi, uj)?;
        total += cost.eval_lifted(dict, &psi, start_step + j + 1);
    }
    Ok(total)
}

/// Horizon cost and its gradient with respect to the control sequence, by a
/// forward sweep followed by backward accumulation of the costate.
pub fn horizon_cost_gradient<M: PiecewiseBilinear + ?Sized>(
    model: &M,
    psi0: &DVector<f64>,
    u: &[f64],
    cost: &StageCost,
    start_step: usize,
) -> Result<(f64, Vec<f64>)> {
    let dict = model.dictionary();
    let p = u.len();
    let mut states = Vec::with_capacity(p + 1);
    let mut pieces = Vec::with_capacity(p);
    states.push(psi0.clone());
    let mut total = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        let piece = model.piece_for(uj)?;
        let next = piece.step_lifted(&states[j], uj)?;
        total += cost.eval_lifted(dict, &next, start_step + j + 1);
        states.push(next);
        pieces.push(piece);
    }
    let mut grad = vec![0.0; p];
    if p == 0 {
        return Ok((total, grad));
    }
    let mut costate = DVector::zeros(dict.k());
    cost.add_gradient_lifted(dict, &states[p], start_step + p, &mut costate);
    for j in (0..p).rev() {
        grad[j] = costate.dot(&pieces[j].control_derivative(&states[j]));
        if j > 0 {
            let mut prev = pieces[j].adjoint_apply(&costate, u[j]);
            cost.add_gradient_lifted(dict, &states[j], start_step + j, &mut prev);
            costate = prev;
        }
    }
    Ok((total, grad))
}

fn bounds_for<M: PiecewiseBilinear + ?Sized>(model: &M, prob: &MpcProblem) -> Result<(f64, f64)> {
    let (lo, hi) = match &prob.admissible {
        Admissible::Interval { lo, hi } => (*lo, *hi),
        Admissible::Labels { labels } if labels.len() == 1 => (labels[0], labels[0]),
        Admissible::Labels { .. } => {
            return Err(Error::invalid("continuous solver needs an interval of admissible controls"))
        }
    };
    let (clo, chi) = model.covered();
    if lo < clo || hi > chi {
        return Err(Error::OutOfRange {
            u: if lo < clo { lo } else { hi },
            lo: clo,
            hi: chi,
        });
    }
    Ok((lo, hi))
}

/// Projected-gradient descent with backtracking on the box-constrained
/// horizon problem. The warm start is clamped into the bounds.
pub fn solve_continuous<M: PiecewiseBilinear + ?Sized>(
    model: &M,
    z_init: &[f64],
    prob: &MpcProblem,
    start_step: usize,
    warm_start: &[f64],
    opts: &GradientOptions,
) -> Result<ContinuousSolution> {
    prob.check_step(model.h())?;
    let dict = model.dictionary();
    prob.cost.check_dimension(dict.q())?;
    if warm_start.len() != prob.horizon {
        return Err(Error::ShapeMismatch {
            what: "warm start",
            expected: prob.horizon,
            found: warm_start.len(),
        });
    }
    let (lo, hi) = bounds_for(model, prob)?;
    let psi0 = dict.lift(z_init)?;
    let project = |v: f64| v.clamp(lo, hi);

    let mut x: Vec<f64> = warm_start
        .iter()
        .map(|&v| if v.is_finite() { project(v) } else { lo })
        .collect();
    let (mut fx, mut g) = horizon_cost_gradient(model, &psi0, &x, &prob.cost, start_step)?;
    if !fx.is_finite() {
        return Err(Error::Solver(format!("non-finite cost at warm start {x:?}")));
    }
    let mut history = vec![fx];
    let mut iterations = 0;
    let mut converged = false;
    let mut pg_norm = projected_gradient_norm(&x, &g, lo, hi);

    while iterations < opts.max_iter {
        if pg_norm <= opts.gtol {
            converged = true;
            break;
        }
        let mut step = opts.initial_step;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| project(xi - step * gi)).collect();
            let f_trial = horizon_cost(model, &psi0, &trial, &prob.cost, start_step)?;
            if !f_trial.is_finite() {
                return Err(Error::Solver(format!(
                    "non-finite cost in line search at iteration {iterations}, step {step}: iterate {trial:?}"
                )));
            }
            let decrease: f64 = x.iter().zip(&trial).zip(&g).map(|((xi, ti), gi)| gi * (xi - ti)).sum();
            if f_trial <= fx - opts.armijo * decrease {
                accepted = Some(trial);
                break;
            }
            step *= opts.backtrack;
        }
        let Some(trial) = accepted else {
            // no representable decrease left along the projected path
            break;
        };
        x = trial;
        let (f_new, g_new) = horizon_cost_gradient(model, &psi0, &x, &prob.cost, start_step)?;
        fx = f_new;
        g = g_new;
        history.push(fx);
        iterations += 1;
        pg_norm = projected_gradient_norm(&x, &g, lo, hi);
    }
    if pg_norm <= opts.gtol {
        converged = true;
    }
    Ok(ContinuousSolution {
        u: x,
        cost: fx,
        iterations,
        projected_gradient_norm: pg_norm,
        converged,
        cost_history: history,
    })
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lo: f64, hi: f64) -> f64 {
    x.iter()
        .zip(g)
        .map(|(xi, gi)| {
            let d = xi - (xi - gi).clamp(lo, hi);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}
