//! 1D viscous Burgers equation `y_t - nu y_xx + (y^2/2)_x = u(t) chi_u(x)` on a
//! periodic grid.
//!
//! Advection uses the flux `(y_l^2 + y_l y_r + y_r^2) / 6`, a consistent
//! approximation of `y^2/2` in divergence form that also makes the discrete
//! kinetic energy conserved by the advective part. Diffusion is the central
//! second difference, time stepping explicit RK4.

use serde::{Deserialize, Serialize};

use super::{rk4_integrate, Plant};
use crate::error::{Error, Result};

/// RK4 stability limits along the negative real and the imaginary axis.
const RK4_REAL_LIMIT: f64 = 2.78;
const RK4_IMAG_LIMIT: f64 = 2.82;
const SAFETY: f64 = 0.5;

/// Smooth localized control shape `exp(-(x - center)^2 / (2 width^2))`,
/// wrapped periodically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeFunction {
    pub center: f64,
    pub width: f64,
}

impl Default for ShapeFunction {
    fn default() -> Self {
        ShapeFunction {
            center: 0.5,
            width: 0.15,
        }
    }
}

/// Initial profiles on `[0, L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// `offset + amplitude sin(2 pi waves x / L)`
    Sine {
        offset: f64,
        amplitude: f64,
        #[serde(default = "one")]
        waves: u32,
    },
    /// `offset + amplitude exp(-(x - center)^2 / (2 width^2))`
    Gaussian {
        offset: f64,
        amplitude: f64,
        center: f64,
        width: f64,
    },
    Values {
        values: Vec<f64>,
    },
}

fn one() -> u32 {
    1
}

impl Profile {
    pub fn sample(&self, grid: &[f64], length: f64) -> Result<Vec<f64>> {
        Ok(match self {
            Profile::Constant { value } => vec![*value; grid.len()],
            Profile::Sine {
                offset,
                amplitude,
                waves,
            } => grid
                .iter()
                .map(|x| offset + amplitude * (2.0 * std::f64::consts::PI * *waves as f64 * x / length).sin())
                .collect(),
            Profile::Gaussian {
                offset,
                amplitude,
                center,
                width,
            } => grid
                .iter()
                .map(|x| offset + amplitude * periodic_bump(*x, *center, *width, length))
                .collect(),
            Profile::Values { values } => {
                if values.len() != grid.len() {
                    return Err(Error::ShapeMismatch {
                        what: "initial profile values",
                        expected: grid.len(),
                        found: values.len(),
                    });
                }
                values.clone()
            }
        })
    }
}

fn periodic_bump(x: f64, center: f64, width: f64, length: f64) -> f64 {
    let mut d = (x - center).rem_euclid(length);
    if d > 0.5 * length {
        d -= length;
    }
    (-d * d / (2.0 * width * width)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BurgersConfig {
    pub nu: f64,
    pub length: f64,
    pub n_cells: usize,
    pub h: f64,
    pub shape: ShapeFunction,
    pub obs_points: Vec<f64>,
    /// Velocity bound used to pick the substep count.
    pub max_speed: f64,
    /// Explicit substep count; derived from `max_speed` when absent.
    pub substeps: Option<usize>,
}

impl Default for BurgersConfig {
    fn default() -> Self {
        BurgersConfig {
            nu: 0.01,
            length: 2.0,
            n_cells: 256,
            h: 0.5,
            shape: ShapeFunction::default(),
            obs_points: vec![0.0, 0.5, 1.0, 1.5],
            max_speed: 2.0,
            substeps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BurgersPlant {
    config: BurgersConfig,
    dx: f64,
    substeps: usize,
    shape: Vec<f64>,
    obs_index: Vec<usize>,
    obs_offset: Vec<f64>,
}

impl BurgersPlant {
    pub fn new(config: BurgersConfig) -> Result<Self> {
        if config.n_cells < 3 {
            return Err(Error::invalid("Burgers grid needs at least 3 cells"));
        }
        if !(config.nu > 0.0 && config.length > 0.0 && config.h > 0.0 && config.max_speed > 0.0) {
            return Err(Error::invalid("Burgers nu, length, h and max_speed must be positive"));
        }
        if !(config.shape.width > 0.0) {
            return Err(Error::invalid("control shape width must be positive"));
        }
        let dx = config.length / config.n_cells as f64;
        let mut obs_index = Vec::with_capacity(config.obs_points.len());
        let mut obs_offset = Vec::with_capacity(config.obs_points.len());
        for &x in &config.obs_points {
            if !(0.0..config.length).contains(&x) {
                return Err(Error::invalid(format!(
                    "observation point {x} outside [0, {})",
                    config.length
                )));
            }
            let idx = ((x / dx).round() as usize) % config.n_cells;
            obs_index.push(idx);
            obs_offset.push(idx as f64 * dx - x);
        }
        if obs_index.is_empty() {
            return Err(Error::invalid("Burgers plant needs at least one observation point"));
        }
        let bound = SAFETY * stable_dt(dx, config.nu, config.max_speed);
        let substeps = match config.substeps {
            Some(0) => return Err(Error::invalid("substeps must be positive")),
            Some(n) => n,
            None => (config.h / bound).ceil() as usize,
        };
        let grid: Vec<f64> = (0..config.n_cells).map(|i| i as f64 * dx).collect();
        let shape = grid
            .iter()
            .map(|x| periodic_bump(*x, config.shape.center, config.shape.width, config.length))
            .collect();
        Ok(BurgersPlant {
            config,
            dx,
            substeps,
            shape,
            obs_index,
            obs_offset,
        })
    }

    pub fn config(&self) -> &BurgersConfig {
        &self.config
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.config.n_cells).map(|i| i as f64 * self.dx).collect()
    }

    /// The control shape sampled on the grid.
    pub fn shape(&self) -> &[f64] {
        &self.shape
    }

    pub fn observation_indices(&self) -> &[usize] {
        &self.obs_index
    }

    /// Snapped grid position minus requested position, per observation point.
    pub fn observation_offsets(&self) -> &[f64] {
        &self.obs_offset
    }

    pub fn initial_state(&self, profile: &Profile) -> Result<Vec<f64>> {
        profile.sample(&self.grid(), self.config.length)
    }

    /// Admissible substep for a field with the given peak speed, including
    /// the safety factor.
    pub fn admissible_dt(&self, max_speed: f64) -> f64 {
        SAFETY * stable_dt(self.dx, self.config.nu, max_speed)
    }

    pub fn rhs(&self, y: &[f64], u: f64, dy: &mut [f64]) {
        let n = y.len();
        let inv_dx = 1.0 / self.dx;
        let diff = self.config.nu * inv_dx * inv_dx;
        // flux at the left face of cell 0 (between n-1 and 0)
        let flux = |l: f64, r: f64| (l * l + l * r + r * r) / 6.0;
        let mut left = flux(y[n - 1], y[0]);
        for i in 0..n {
            let prev = if i == 0 { y[n - 1] } else { y[i - 1] };
            let next = if i + 1 == n { y[0] } else { y[i + 1] };
            let right = flux(y[i], next);
            dy[i] = -(right - left) * inv_dx + diff * (next - 2.0 * y[i] + prev) + u * self.shape[i];
            left = right;
        }
    }
}

fn stable_dt(dx: f64, nu: f64, max_speed: f64) -> f64 {
    1.0 / (4.0 * nu / (RK4_REAL_LIMIT * dx * dx) + max_speed / (RK4_IMAG_LIMIT * dx))
}

impl Plant for BurgersPlant {
    fn h(&self) -> f64 {
        self.config.h
    }

    fn q(&self) -> usize {
        self.obs_index.len()
    }

    fn state_dim(&self) -> usize {
        self.config.n_cells
    }

    fn step(&self, state: &[f64], u: f64) -> Result<Vec<f64>> {
        if state.len() != self.config.n_cells {
            return Err(Error::ShapeMismatch {
                what: "Burgers state",
                expected: self.config.n_cells,
                found: state.len(),
            });
        }
        if !u.is_finite() || state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Burgers state or control".into()));
        }
        let max_speed = state.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dt = self.config.h / self.substeps as f64;
        let bound = self.admissible_dt(max_speed);
        if dt > bound {
            return Err(Error::Cfl { dt, bound, max_speed });
        }
        let next = rk4_integrate(state, self.config.h, self.substeps, |y, dy| self.rhs(y, u, dy));
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Burgers state (blow-up)".into()));
        }
        Ok(next)
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        self.obs_index.iter().map(|&i| state[i]).collect()
    }
}
