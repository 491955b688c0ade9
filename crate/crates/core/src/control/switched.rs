use nalgebra::DVector;

use super::{Admissible, MpcProblem};
use crate::error::{Error, Result};
use crate::krom::SwitchedKrom;

/// Default cap on `n_c^p`.
pub const DEFAULT_BUDGET: u128 = 1 << 22;

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedSolution {
    pub sequence: Vec<f64>,
    pub indices: Vec<usize>,
    pub cost: f64,
}

/// Exact minimizer over all label sequences of length `p` by depth-first
/// enumeration of the lifted dynamics. Ties keep the lexicographically first
/// sequence of label indices. `start_step` is the absolute step of `z_init`.
pub fn solve_switched(
    s: &SwitchedKrom,
    z_init: &[f64],
    prob: &MpcProblem,
    start_step: usize,
    budget: u128,
) -> Result<SwitchedSolution> {
    prob.check_step(s.h())?;
    let labels = s.labels();
    match &prob.admissible {
        Admissible::Labels { labels: allowed } => {
            let mut sorted = allowed.clone();
            sorted.sort_by(f64::total_cmp);
            if sorted != labels {
                return Err(Error::Incompatible(format!(
                    "admissible labels {allowed:?} differ from model labels {labels:?}"
                )));
            }
        }
        Admissible::Interval { .. } => {
            return Err(Error::invalid("switched solver needs a discrete label set"));
        }
    }
    let dict = s.dictionary();
    prob.cost.check_dimension(dict.q())?;
    let n_c = labels.len();
    let p = prob.horizon;
    let needed = (n_c as u128)
        .checked_pow(p as u32)
        .filter(|n| *n <= budget)
        .ok_or(Error::BudgetExceeded {
            needed: (n_c as u128).checked_pow(p as u32).unwrap_or(u128::MAX),
            budget,
        })?;
    debug_assert!(needed >= 1);

    let mut search = Search {
        s,
        prob,
        start_step,
        states: vec![dict.lift(z_init)?; p + 1],
        path: vec![0; p],
        best_path: vec![0; p],
        best_cost: f64::INFINITY,
    };
    search.descend(0, 0.0);
    if !search.best_cost.is_finite() {
        return Err(Error::Solver("no finite-cost label sequence".into()));
    }
    Ok(SwitchedSolution {
        sequence: search.best_path.iter().map(|&i| labels[i]).collect(),
        indices: search.best_path,
        cost: search.best_cost,
    })
}

struct Search<'a> {
    s: &'a SwitchedKrom,
    prob: &'a MpcProblem,
    start_step: usize,
    states: Vec<DVector<f64>>,
    path: Vec<usize>,
    best_path: Vec<usize>,
    best_cost: f64,
}

impl Search<'_> {
    fn descend(&mut self, depth: usize, partial: f64) {
        let p = self.prob.horizon;
        if depth == p {
            if partial < self.best_cost {
                self.best_cost = partial;
                self.best_path.copy_from_slice(&self.path);
            }
            return;
        }
        let dict = self.s.dictionary();
        for (j, model) in self.s.models().iter().enumerate() {
            let next = model.transition() * &self.states[depth];
            let cost = partial
                + self
                    .prob
                    .cost
                    .eval_lifted(dict, &next, self.start_step + depth + 1);
            // stage costs are non-negative, so no completion can beat the incumbent
            if cost >= self.best_cost {
                continue;
            }
            self.states[depth + 1] = next;
            self.path[depth] = j;
            self.descend(depth + 1, cost);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{Reference, StageCost};
    use crate::dictionary::Dictionary;
    use crate::edmd::KoopmanModel;
    use nalgebra::DMatrix;

    fn scalar_models() -> SwitchedKrom {
        let dict = Dictionary::new(1, 1).unwrap();
        let mk = |label: f64, a: f64, b: f64| {
            let kt = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, b, a]);
            KoopmanModel::from_koopman_matrix(kt.transpose(), dict.clone(), label, 0.1, 0.0).unwrap()
        };
        SwitchedKrom::new(vec![mk(0.0, 0.9, -0.1), mk(1.0, 0.9, 0.2)]).unwrap()
    }

    fn problem(labels: Vec<f64>, p: usize, weight: f64, target: f64) -> MpcProblem {
        let cost = StageCost::tracking(vec![0], vec![weight], Reference::constant(vec![target]).unwrap()).unwrap();
        MpcProblem::new(p, cost, Admissible::Labels { labels }, 0.1).unwrap()
    }

    #[test]
    fn single_label_gives_constant_sequence() {
        let dict = Dictionary::new(1, 1).unwrap();
        let m = KoopmanModel::from_koopman_matrix(DMatrix::identity(2, 2), dict, 3.0, 0.1, 0.0).unwrap();
        let s = SwitchedKrom::new(vec![m]).unwrap();
        let sol = solve_switched(&s, &[1.0], &problem(vec![3.0], 4, 1.0, 0.0), 0, DEFAULT_BUDGET).unwrap();
        assert_eq!(sol.sequence, vec![3.0; 4]);
        assert!((sol.cost - 4.0).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_picks_first_sequence() {
        let s = scalar_models();
        let sol = solve_switched(&s, &[1.0], &problem(vec![0.0, 1.0], 5, 0.0, 2.0), 0, DEFAULT_BUDGET).unwrap();
        assert_eq!(sol.indices, vec![0; 5]);
        assert_eq!(sol.cost, 0.0);
    }

    #[test]
    fn drives_towards_target() {
        let s = scalar_models();
        let sol = solve_switched(&s, &[0.0], &problem(vec![0.0, 1.0], 3, 1.0, 1.0), 0, DEFAULT_BUDGET).unwrap();
        assert_eq!(sol.sequence, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn budget_and_label_checks() {
        let s = scalar_models();
        let err = solve_switched(&s, &[0.0], &problem(vec![0.0, 1.0], 10, 1.0, 1.0), 0, 512).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { needed: 1024, budget: 512 }));
        assert!(solve_switched(&s, &[0.0], &problem(vec![0.0, 2.0], 2, 1.0, 1.0), 0, DEFAULT_BUDGET).is_err());
    }
}
