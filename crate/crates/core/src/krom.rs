//! Reduced-order control models assembled from fitted Koopman matrices.
//!
//! * [`SwitchedKrom`]: one autonomous lifted system per control label.
//! * [`BilinearKrom`]: `psi+ = A psi + B psi (u - u_a) / (u_b - u_a)` with
//!   `A = K_a^T` and `B = K_b^T - K_a^T`.
//! * [`LocalizedKrom`]: contiguous bilinear pieces sharing the operators at
//!   interior knots.

use nalgebra::{DMatrix, DVector};

use crate::dictionary::Dictionary;
use crate::edmd::{check_lifted, KoopmanModel, Propagation};
use crate::error::{Error, Result};
use crate::plants::Plant;

/// What to do with a control outside the covered interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RangePolicy {
    #[default]
    Reject,
    Clamp,
}

fn check_compatible(a: &KoopmanModel, b: &KoopmanModel) -> Result<()> {
    if a.dictionary() != b.dictionary() {
        return Err(Error::Incompatible("models use different dictionaries".into()));
    }
    if a.h() != b.h() {
        return Err(Error::Incompatible(format!(
            "models use different sample steps ({} vs {})",
            a.h(),
            b.h()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedKrom {
    models: Vec<KoopmanModel>,
}

impl SwitchedKrom {
    /// Sorts the models by label; labels must be distinct.
    pub fn new(mut models: Vec<KoopmanModel>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::invalid("switched model needs at least one member"));
        }
        models.sort_by(|a, b| a.control_label().total_cmp(&b.control_label()));
        for pair in models.windows(2) {
            check_compatible(&pair[0], &pair[1])?;
            if pair[0].control_label() >= pair[1].control_label() {
                return Err(Error::Incompatible(format!(
                    "duplicate control label {}",
                    pair[1].control_label()
                )));
            }
        }
        Ok(SwitchedKrom { models })
    }

    pub fn models(&self) -> &[KoopmanModel] {
        &self.models
    }

    pub fn labels(&self) -> Vec<f64> {
        self.models.iter().map(|m| m.control_label()).collect()
    }

    pub fn dictionary(&self) -> &Dictionary {
        self.models[0].dictionary()
    }

    pub fn h(&self) -> f64 {
        self.models[0].h()
    }

    pub fn index_of(&self, label: f64) -> Result<usize> {
        self.models
            .iter()
            .position(|m| m.control_label() == label)
            .ok_or(Error::UnknownLabel(label))
    }

    pub fn model_for(&self, label: f64) -> Result<&KoopmanModel> {
        Ok(&self.models[self.index_of(label)?])
    }

    /// One lifted step with the matrix of `label`.
    pub fn step_lifted(&self, psi: &DVector<f64>, label: f64) -> Result<DVector<f64>> {
        check_lifted(self.dictionary(), psi)?;
        Ok(self.model_for(label)?.transition() * psi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilinearKrom {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    upper: DMatrix<f64>,
    u_a: f64,
    u_b: f64,
    dict: Dictionary,
    h: f64,
}

/// Interpolates two Koopman models fitted at `u_a < u_b`.
pub fn make_bilinear(model_a: &KoopmanModel, model_b: &KoopmanModel) -> Result<BilinearKrom> {
    check_compatible(model_a, model_b)?;
    let (u_a, u_b) = (model_a.control_label(), model_b.control_label());
    if !(u_a < u_b) {
        return Err(Error::Incompatible(format!(
            "bilinear model needs u_a < u_b, got {u_a} and {u_b}"
        )));
    }
    let a = model_a.transition().clone();
    let upper = model_b.transition().clone();
    Ok(BilinearKrom {
        b: &upper - &a,
        a,
        upper,
        u_a,
        u_b,
        dict: model_a.dictionary().clone(),
        h: model_a.h(),
    })
}

impl BilinearKrom {
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// `A + B`, the operator at `u_b`, exactly as fitted.
    pub fn upper(&self) -> &DMatrix<f64> {
        &self.upper
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.u_a, self.u_b)
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Interpolation weight `(u - u_a) / (u_b - u_a)`.
    pub fn weight(&self, u: f64) -> f64 {
        (u - self.u_a) / (self.u_b - self.u_a)
    }

    fn admit(&self, u: f64, policy: RangePolicy) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::NonFinite("control".into()));
        }
        if (self.u_a..=self.u_b).contains(&u) {
            return Ok(u);
        }
        match policy {
            RangePolicy::Clamp => Ok(u.clamp(self.u_a, self.u_b)),
            RangePolicy::Reject => Err(Error::OutOfRange {
                u,
                lo: self.u_a,
                hi: self.u_b,
            }),
        }
    }

    /// `A psi + B psi w(u)`, evaluated as `(1 - w) A psi + w (A + B) psi` so
    /// that both endpoints reproduce the fitted operators bit for bit.
    pub fn step_lifted(&self, psi: &DVector<f64>, u: f64) -> Result<DVector<f64>> {
        self.step_lifted_with(psi, u, RangePolicy::Reject)
    }

    pub fn step_lifted_with(&self, psi: &DVector<f64>, u: f64, policy: RangePolicy) -> Result<DVector<f64>> {
        check_lifted(&self.dict, psi)?;
        let w = self.weight(self.admit(u, policy)?);
        Ok(self.interpolate(psi, w))
    }

    /// Interpolated transition matrix `(1 - w) K_a^T + w K_b^T` at `u`.
    pub fn transition_at(&self, u: f64) -> Result<DMatrix<f64>> {
        let w = self.weight(self.admit(u, RangePolicy::Reject)?);
        Ok(if w == 0.0 {
            self.a.clone()
        } else if w == 1.0 {
            self.upper.clone()
        } else {
            &self.a * (1.0 - w) + &self.upper * w
        })
    }

    fn interpolate(&self, psi: &DVector<f64>, w: f64) -> DVector<f64> {
        if w == 0.0 {
            return &self.a * psi;
        }
        if w == 1.0 {
            return &self.upper * psi;
        }
        (&self.a * psi) * (1.0 - w) + (&self.upper * psi) * w
    }

    /// Derivative of the step with respect to `u`: `B psi / (u_b - u_a)`.
    pub fn control_derivative(&self, psi: &DVector<f64>) -> DVector<f64> {
        (&self.b * psi) / (self.u_b - self.u_a)
    }

    /// `M(u)^T lambda` for the state Jacobian `M(u) = A + w(u) B`.
    pub fn adjoint_apply(&self, lambda: &DVector<f64>, u: f64) -> DVector<f64> {
        let w = self.weight(u);
        if w == 0.0 {
            return self.a.tr_mul(lambda);
        }
        self.a.tr_mul(lambda) + self.b.tr_mul(lambda) * w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizedKrom {
    pieces: Vec<BilinearKrom>,
}

impl LocalizedKrom {
    pub fn new(pieces: Vec<BilinearKrom>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::invalid("localized model needs at least one piece"));
        }
        for pair in pieces.windows(2) {
            let (lo, hi) = (&pair[0], &pair[1]);
            if lo.dict != hi.dict || lo.h != hi.h {
                return Err(Error::Incompatible("pieces use different dictionaries or steps".into()));
            }
            if lo.u_b != hi.u_a {
                return Err(Error::Incompatible(format!(
                    "pieces are not contiguous: {} then {}",
                    lo.u_b, hi.u_a
                )));
            }
            if lo.upper != hi.a {
                return Err(Error::Incompatible(format!(
                    "pieces disagree on the operator at knot {}",
                    lo.u_b
                )));
            }
        }
        Ok(LocalizedKrom { pieces })
    }

    /// Builds one piece per adjacent pair of models (sorted by label).
    pub fn from_models(models: &[KoopmanModel]) -> Result<Self> {
        if models.len() < 2 {
            return Err(Error::invalid("localized model needs at least two fitted labels"));
        }
        let mut sorted: Vec<&KoopmanModel> = models.iter().collect();
        sorted.sort_by(|a, b| a.control_label().total_cmp(&b.control_label()));
        let pieces = sorted
            .windows(2)
            .map(|w| make_bilinear(w[0], w[1]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(pieces)
    }

    pub fn knots(&self) -> Vec<f64> {
        let mut knots: Vec<f64> = self.pieces.iter().map(|p| p.u_a).collect();
        knots.push(self.pieces.last().expect("non-empty").u_b);
        knots
    }
}

impl From<BilinearKrom> for LocalizedKrom {
    fn from(piece: BilinearKrom) -> Self {
        LocalizedKrom { pieces: vec![piece] }
    }
}

/// Common behavior of single and piecewise bilinear models.
pub trait PiecewiseBilinear {
    fn pieces(&self) -> &[BilinearKrom];

    fn dictionary(&self) -> &Dictionary {
        &self.pieces()[0].dict
    }

    fn h(&self) -> f64 {
        self.pieces()[0].h
    }

    /// Covered control interval.
    fn covered(&self) -> (f64, f64) {
        let p = self.pieces();
        (p[0].u_a, p[p.len() - 1].u_b)
    }

    /// Piece containing `u`; interior knots go to the upper piece.
    fn piece_index(&self, u: f64) -> Result<usize> {
        let (lo, hi) = self.covered();
        if !u.is_finite() {
            return Err(Error::NonFinite("control".into()));
        }
        if !(lo..=hi).contains(&u) {
            return Err(Error::OutOfRange { u, lo, hi });
        }
        let pieces = self.pieces();
        Ok(pieces
            .iter()
            .position(|p| u < p.u_b)
            .unwrap_or(pieces.len() - 1))
    }

    fn piece_for(&self, u: f64) -> Result<&BilinearKrom> {
        Ok(&self.pieces()[self.piece_index(u)?])
    }

    fn step_lifted(&self, psi: &DVector<f64>, u: f64) -> Result<DVector<f64>> {
        self.piece_for(u)?.step_lifted(psi, u)
    }

    fn step_lifted_with(&self, psi: &DVector<f64>, u: f64, policy: RangePolicy) -> Result<DVector<f64>> {
        let u = match policy {
            RangePolicy::Clamp if u.is_finite() => {
                let (lo, hi) = self.covered();
                u.clamp(lo, hi)
            }
            _ => u,
        };
        self.piece_for(u)?.step_lifted(psi, u)
    }
}

impl PiecewiseBilinear for BilinearKrom {
    fn pieces(&self) -> &[BilinearKrom] {
        std::slice::from_ref(self)
    }
}

impl PiecewiseBilinear for LocalizedKrom {
    fn pieces(&self) -> &[BilinearKrom] {
        &self.pieces
    }
}

/// A bilinear model used as a plant: the state is the lifted vector, so a
/// loop closed around it has zero plant-model mismatch.
#[derive(Debug, Clone, PartialEq)]
pub struct RomPlant<M> {
    model: M,
}

impl<M: PiecewiseBilinear> RomPlant<M> {
    pub fn new(model: M) -> Self {
        RomPlant { model }
    }

    pub fn initial_state(&self, z0: &[f64]) -> Result<Vec<f64>> {
        Ok(self.model.dictionary().lift(z0)?.as_slice().to_vec())
    }
}

impl<M: PiecewiseBilinear> Plant for RomPlant<M> {
    fn h(&self) -> f64 {
        self.model.h()
    }

    fn q(&self) -> usize {
        self.model.dictionary().q()
    }

    fn state_dim(&self) -> usize {
        self.model.dictionary().k()
    }

    fn step(&self, state: &[f64], u: f64) -> Result<Vec<f64>> {
        let psi = DVector::from_column_slice(state);
        Ok(self.model.step_lifted(&psi, u)?.as_slice().to_vec())
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        let offset = self.model.dictionary().coordinate_positions().map_or(0, |r| r.start);
        state[offset..offset + self.q()].to_vec()
    }

    fn control_bounds(&self) -> (f64, f64) {
        self.model.covered()
    }
}

/// Observable trajectory `q x (p + 1)` of a bilinear model under `u_seq`.
pub fn rollout<M: PiecewiseBilinear + ?Sized>(model: &M, z0: &[f64], u_seq: &[f64]) -> Result<DMatrix<f64>> {
    rollout_with(model, z0, u_seq, Propagation::LiftOnce, RangePolicy::Reject)
}

pub fn rollout_with<M: PiecewiseBilinear + ?Sized>(
    model: &M,
    z0: &[f64],
    u_seq: &[f64],
    mode: Propagation,
    policy: RangePolicy,
) -> Result<DMatrix<f64>> {
    let dict = model.dictionary();
    propagate(dict, z0, u_seq.len(), mode, |psi, i| {
        model.step_lifted_with(psi, u_seq[i], policy)
    })
}

/// Trajectory of a switched model following the label sequence `tau`.
pub fn switched_rollout(s: &SwitchedKrom, z0: &[f64], tau: &[f64]) -> Result<DMatrix<f64>> {
    switched_rollout_with(s, z0, tau, Propagation::LiftOnce)
}

pub fn switched_rollout_with(
    s: &SwitchedKrom,
    z0: &[f64],
    tau: &[f64],
    mode: Propagation,
) -> Result<DMatrix<f64>> {
    propagate(s.dictionary(), z0, tau.len(), mode, |psi, i| s.step_lifted(psi, tau[i]))
}

fn propagate<F>(dict: &Dictionary, z0: &[f64], steps: usize, mode: Propagation, mut step: F) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>, usize) -> Result<DVector<f64>>,
{
    let mut out = DMatrix::zeros(dict.q(), steps + 1);
    let mut psi = dict.lift(z0)?;
    out.set_column(0, &DVector::from_column_slice(z0));
    for i in 0..steps {
        psi = step(&psi, i)?;
        let z = dict.project(&psi)?;
        if mode == Propagation::Relift {
            psi = dict.lift(z.as_slice())?;
        }
        out.set_column(i + 1, &z);
    }
    Ok(out)
}

/// Pointwise relative error of one component. Samples where the reference is
/// exactly zero are masked (`None`) and skipped by the summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeError {
    pub series: Vec<Option<f64>>,
    pub max: Option<f64>,
    pub mean: Option<f64>,
}

pub fn relative_error(reference: &DMatrix<f64>, model: &DMatrix<f64>, component: usize) -> Result<RelativeError> {
    if reference.shape() != model.shape() {
        return Err(Error::invalid(format!(
            "trajectory shapes differ: {:?} vs {:?}",
            reference.shape(),
            model.shape()
        )));
    }
    if component >= reference.nrows() {
        return Err(Error::invalid(format!("component {component} out of range")));
    }
    let series: Vec<Option<f64>> = reference
        .row(component)
        .iter()
        .zip(model.row(component).iter())
        .map(|(r, m)| (*r != 0.0).then(|| (m - r).abs() / r.abs()))
        .collect();
    let valid: Vec<f64> = series.iter().flatten().copied().collect();
    let max = valid.iter().copied().reduce(f64::max);
    let mean = (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64);
    Ok(RelativeError { series, max, mean })
}
