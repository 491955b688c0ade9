//! Least-squares Koopman approximation (EDMD) and its diagnostics.

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};

/// Paired snapshot matrices recorded under one constant control.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    z: DMatrix<f64>,
    z_next: DMatrix<f64>,
    control_label: f64,
    h: f64,
}

impl SnapshotSet {
    pub fn new(z: DMatrix<f64>, z_next: DMatrix<f64>, control_label: f64, h: f64) -> Result<Self> {
        if z.shape() != z_next.shape() {
            return Err(Error::invalid(format!(
                "snapshot matrices differ in shape: {:?} vs {:?}",
                z.shape(),
                z_next.shape()
            )));
        }
        if z.ncols() == 0 || z.nrows() == 0 {
            return Err(Error::invalid("snapshot set needs at least one pair"));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid(format!("sample step must be positive, got {h}")));
        }
        if !control_label.is_finite() {
            return Err(Error::NonFinite("control label".into()));
        }
        Ok(SnapshotSet {
            z,
            z_next,
            control_label,
            h,
        })
    }

    /// Pairs consecutive columns of a single `q x (m+1)` trajectory.
    pub fn from_trajectory(trajectory: &DMatrix<f64>, control_label: f64, h: f64) -> Result<Self> {
        let n = trajectory.ncols();
        if n < 2 {
            return Err(Error::invalid("trajectory needs at least two samples"));
        }
        Self::new(
            trajectory.columns(0, n - 1).into_owned(),
            trajectory.columns(1, n - 1).into_owned(),
            control_label,
            h,
        )
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn z_next(&self) -> &DMatrix<f64> {
        &self.z_next
    }

    pub fn control_label(&self) -> f64 {
        self.control_label
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn q(&self) -> usize {
        self.z.nrows()
    }

    /// Number of pairs.
    pub fn len(&self) -> usize {
        self.z.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.z.ncols() == 0
    }

    /// Columns `[start, start + count)` as a new set.
    pub fn columns(&self, start: usize, count: usize) -> Result<Self> {
        if count == 0 || start + count > self.len() {
            return Err(Error::invalid(format!(
                "column range {start}..{} out of bounds for {} pairs",
                start + count,
                self.len()
            )));
        }
        Self::new(
            self.z.columns(start, count).into_owned(),
            self.z_next.columns(start, count).into_owned(),
            self.control_label,
            self.h,
        )
    }

    /// Splits off the trailing `fraction` of the columns as a held-out set.
    pub fn split_tail(&self, fraction: f64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
            return Err(Error::invalid("held-out fraction must be in (0, 1)"));
        }
        let test = ((self.len() as f64) * fraction).round().max(1.0) as usize;
        if test >= self.len() {
            return Err(Error::invalid("too few pairs to hold out a test set"));
        }
        let train = self.len() - test;
        Ok((self.columns(0, train)?, self.columns(train, test)?))
    }

    /// Concatenates sets recorded under the same label and step.
    pub fn concat(sets: &[SnapshotSet]) -> Result<Self> {
        let first = sets.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let mut total = 0;
        for s in sets {
            if s.control_label != first.control_label || s.h != first.h || s.q() != first.q() {
                return Err(Error::invalid("cannot concatenate sets with different label, h or q"));
            }
            total += s.len();
        }
        let mut z = DMatrix::zeros(first.q(), total);
        let mut z_next = DMatrix::zeros(first.q(), total);
        let mut offset = 0;
        for s in sets {
            z.columns_mut(offset, s.len()).copy_from(&s.z);
            z_next.columns_mut(offset, s.len()).copy_from(&s.z_next);
            offset += s.len();
        }
        Self::new(z, z_next, first.control_label, first.h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Singular values below `svd_tol * sigma_max` are treated as zero.
    pub svd_tol: f64,
    /// Tikhonov weight; zero disables regularization.
    pub ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            svd_tol: 1e-10,
            ridge: 0.0,
        }
    }
}

/// How a trajectory is propagated through the lifted space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Propagation {
    /// Lift the initial observable once and iterate in lifted space.
    #[default]
    LiftOnce,
    /// Project and re-lift after every step.
    Relift,
}

/// A fitted finite-dimensional Koopman matrix bound to a dictionary and a
/// constant control value.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    /// `K^T`: the lifted update is `psi(z_{i+1}) = K^T psi(z_i)`.
    transition: DMatrix<f64>,
    dict: Dictionary,
    control_label: f64,
    h: f64,
    fit_residual: f64,
}

impl KoopmanModel {
    /// Builds a model from a given `K` (not its transpose).
    pub fn from_koopman_matrix(
        k: DMatrix<f64>,
        dict: Dictionary,
        control_label: f64,
        h: f64,
        fit_residual: f64,
    ) -> Result<Self> {
        if k.nrows() != dict.k() || k.ncols() != dict.k() {
            return Err(Error::ShapeMismatch {
                what: "Koopman matrix dimension",
                expected: dict.k(),
                found: if k.nrows() != dict.k() { k.nrows() } else { k.ncols() },
            });
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Koopman matrix".into()));
        }
        Ok(KoopmanModel {
            transition: k.transpose(),
            dict,
            control_label,
            h,
            fit_residual,
        })
    }

    /// `K^T`.
    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    /// `K` itself.
    pub fn koopman_matrix(&self) -> DMatrix<f64> {
        self.transition.transpose()
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn control_label(&self) -> f64 {
        self.control_label
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn fit_residual(&self) -> f64 {
        self.fit_residual
    }

    pub fn predict_lifted(&self, psi: &DVector<f64>, steps: usize) -> Result<DVector<f64>> {
        check_lifted(&self.dict, psi)?;
        let mut g = psi.clone();
        for _ in 0..steps {
            g = &self.transition * g;
        }
        Ok(g)
    }

    /// Returns the `q x (steps + 1)` observable trajectory starting at `z0`.
    pub fn predict_observable(&self, z0: &[f64], steps: usize) -> Result<DMatrix<f64>> {
        self.predict_observable_with(z0, steps, Propagation::LiftOnce)
    }

    pub fn predict_observable_with(
        &self,
        z0: &[f64],
        steps: usize,
        mode: Propagation,
    ) -> Result<DMatrix<f64>> {
        let q = self.dict.q();
        let mut out = DMatrix::zeros(q, steps + 1);
        let mut g = self.dict.lift(z0)?;
        out.set_column(0, &DVector::from_column_slice(z0));
        for i in 1..=steps {
            g = &self.transition * g;
            let z = self.dict.project(&g)?;
            if mode == Propagation::Relift {
                g = self.dict.lift(z.as_slice())?;
            }
            out.set_column(i, &z);
        }
        Ok(out)
    }

    /// Eigenvalues of `K^T`, sorted by modulus (descending) then argument.
    ///
    /// Fails if the Schur iteration does not converge.
    pub fn spectrum(&self) -> Result<Vec<Complex<f64>>> {
        let eps = 64.0 * f64::EPSILON * self.transition.amax().max(1.0);
        let schur = nalgebra::linalg::Schur::try_new(self.transition.clone(), eps, 10_000)
            .ok_or_else(|| Error::Fit("eigenvalue iteration did not converge".into()))?;
        let mut eig: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| {
            b.norm()
                .total_cmp(&a.norm())
                .then_with(|| a.arg().total_cmp(&b.arg()))
        });
        Ok(eig)
    }

    /// Recomputes `||Psi_Z~ - K^T Psi_Z||_F` on a data set.
    pub fn lifted_residual(&self, data: &SnapshotSet) -> Result<f64> {
        let psi_z = self.dict.lift_batch(data.z())?;
        let psi_next = self.dict.lift_batch(data.z_next())?;
        Ok((psi_next - &self.transition * psi_z).norm())
    }

    /// RMS one-step error in observable space over a data set.
    pub fn one_step_error(&self, data: &SnapshotSet) -> Result<f64> {
        let psi_z = self.dict.lift_batch(data.z())?;
        let predicted = self.dict.projection_matrix()? * (&self.transition * psi_z);
        let diff = predicted - data.z_next();
        Ok(diff.norm() / (diff.len() as f64).sqrt())
    }
}

pub(crate) fn check_lifted(dict: &Dictionary, psi: &DVector<f64>) -> Result<()> {
    if psi.len() != dict.k() {
        return Err(Error::ShapeMismatch {
            what: "lifted vector",
            expected: dict.k(),
            found: psi.len(),
        });
    }
    Ok(())
}

/// Fits `K^T = Psi_Z~ Psi_Z^+` with an SVD pseudoinverse.
pub fn fit(dict: &Dictionary, data: &SnapshotSet, options: FitOptions) -> Result<KoopmanModel> {
    if !(options.svd_tol > 0.0 && options.svd_tol < 1.0) {
        return Err(Error::invalid(format!(
            "svd_tol must lie in (0, 1), got {}",
            options.svd_tol
        )));
    }
    if options.ridge < 0.0 || !options.ridge.is_finite() {
        return Err(Error::invalid("ridge weight must be finite and non-negative"));
    }
    if data.q() != dict.q() {
        return Err(Error::ShapeMismatch {
            what: "snapshot observable dimension",
            expected: dict.q(),
            found: data.q(),
        });
    }
    if data.z().iter().all(|v| *v == 0.0) {
        return Err(Error::Fit("snapshot matrix is identically zero".into()));
    }

    let psi_z = dict.lift_batch(data.z())?;
    let psi_next = dict.lift_batch(data.z_next())?;
    let pinv = pseudo_inverse(&psi_z, options.svd_tol, options.ridge)?;
    let transition = &psi_next * pinv;
    if transition.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("fitted matrix has non-finite entries".into()));
    }
    let fit_residual = (&psi_next - &transition * &psi_z).norm();

    Ok(KoopmanModel {
        transition,
        dict: dict.clone(),
        control_label: data.control_label(),
        h: data.h(),
        fit_residual,
    })
}

/// Moore-Penrose pseudoinverse via SVD with a relative cutoff. With `ridge > 0`
/// the singular values are filtered as `s / (s^2 + ridge)` instead.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64, ridge: f64) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().ok_or_else(|| Error::Fit("SVD did not return U".into()))?;
    let v_t = svd.v_t.as_ref().ok_or_else(|| Error::Fit("SVD did not return V^T".into()))?;
    let sigma_max = svd.singular_values.max();
    if !(sigma_max > 0.0) {
        return Err(Error::Fit("data matrix has no nonzero singular value".into()));
    }
    let cutoff = rel_tol * sigma_max;
    let filtered = svd.singular_values.map(|s| {
        if s <= cutoff {
            0.0
        } else if ridge > 0.0 {
            s / (s * s + ridge)
        } else {
            1.0 / s
        }
    });
    // V diag(filtered) U^T
    let mut v_scaled = v_t.transpose();
    for (j, f) in filtered.iter().enumerate() {
        v_scaled.column_mut(j).scale_mut(*f);
    }
    Ok(v_scaled * u.transpose())
}

/// One row of a convergence scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub max_order: usize,
    pub k: usize,
    pub m: usize,
    pub fit_residual: f64,
    pub test_error: f64,
}

/// Fits on growing prefixes of `train` for each dictionary order and reports
/// the one-step RMS error on `test`.
pub fn convergence_scan(
    train: &SnapshotSet,
    test: &SnapshotSet,
    orders: &[usize],
    sample_counts: &[usize],
    options: FitOptions,
) -> Result<Vec<ScanRow>> {
    check_ladder("dictionary ladder", orders)?;
    check_ladder("sample ladder", sample_counts)?;
    if let Some(&m) = sample_counts.last() {
        if m > train.len() {
            return Err(Error::invalid(format!(
                "sample ladder asks for {m} pairs, training set has {}",
                train.len()
            )));
        }
    }
    let mut rows = Vec::with_capacity(orders.len() * sample_counts.len());
    for &order in orders {
        let dict = Dictionary::new(train.q(), order)?;
        for &m in sample_counts {
            let model = fit(&dict, &train.columns(0, m)?, options)?;
            rows.push(ScanRow {
                max_order: order,
                k: dict.k(),
                m,
                fit_residual: model.fit_residual(),
                test_error: model.one_step_error(test)?,
            });
        }
    }
    Ok(rows)
}

/// Convergence scan holding out the last 20% of the columns.
pub fn convergence_scan_tail(
    data: &SnapshotSet,
    orders: &[usize],
    sample_counts: &[usize],
    options: FitOptions,
) -> Result<Vec<ScanRow>> {
    let (train, test) = data.split_tail(0.2)?;
    convergence_scan(&train, &test, orders, sample_counts, options)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RidgeScore {
    pub ridge: f64,
    /// Root of the summed squared one-step RMS errors over folds and labels.
    pub score: f64,
}

/// Picks the ridge value with the smallest validation error. Each fold pairs
/// training sets with test sets; sets are matched by control label and labels
/// missing on either side are skipped. Ties keep the earlier ladder entry.
pub fn select_ridge(
    dict: &Dictionary,
    folds: &[(Vec<SnapshotSet>, Vec<SnapshotSet>)],
    ladder: &[f64],
    svd_tol: f64,
) -> Result<(f64, Vec<RidgeScore>)> {
    if ladder.is_empty() || ladder.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::invalid("ridge ladder must be non-empty, finite and non-negative"));
    }
    let mut scores = Vec::with_capacity(ladder.len());
    for &ridge in ladder {
        let mut total = 0.0;
        let mut used = 0;
        for (train, test) in folds {
            for set in train {
                let Some(held) = test.iter().find(|t| t.control_label() == set.control_label()) else {
                    continue;
                };
                let model = fit(dict, set, FitOptions { svd_tol, ridge })?;
                total += model.one_step_error(held)?.powi(2);
                used += 1;
            }
        }
        if used == 0 {
            return Err(Error::invalid("no fold shares a control label between training and test"));
        }
        scores.push(RidgeScore {
            ridge,
            score: total.sqrt(),
        });
    }
    let best = scores
        .iter()
        .fold(None::<RidgeScore>, |best, s| match best {
            Some(b) if b.score <= s.score => Some(b),
            _ => Some(*s),
        })
        .expect("ladder is non-empty");
    Ok((best.ridge, scores))
}

fn check_ladder(name: &str, ladder: &[usize]) -> Result<()> {
    if ladder.is_empty() {
        return Err(Error::invalid(format!("{name} is empty")));
    }
    if ladder.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid(format!("{name} is not monotone")));
    }
    Ok(())
}
