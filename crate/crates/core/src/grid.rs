//! Uniform space-time grids and physical unit scales.

use crate::error::{Error, Result};

/// Smallest admissible number of spatial points.
pub const MIN_NX: usize = 16;

/// Uniform 1-D spatial grid crossed with a uniform time grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTimeGrid {
    x_min: f64,
    x_max: f64,
    n_x: usize,
    t0: f64,
    t1: f64,
    n_t: usize,
}

impl SpaceTimeGrid {
    pub fn new(x_min: f64, x_max: f64, n_x: usize, t0: f64, t1: f64, n_t: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && t0.is_finite() && t1.is_finite()) {
            return Err(Error::InvalidGrid("bounds must be finite".into()));
        }
        if x_min >= x_max {
            return Err(Error::InvalidGrid(format!(
                "x_min {x_min} >= x_max {x_max}"
            )));
        }
        if t0 >= t1 {
            return Err(Error::InvalidGrid(format!("t0 {t0} >= t1 {t1}")));
        }
        if n_x < MIN_NX {
            return Err(Error::GridTooSmall {
                needed: MIN_NX,
                got: n_x,
            });
        }
        if n_t < 2 {
            return Err(Error::GridTooSmall {
                needed: 2,
                got: n_t,
            });
        }
        Ok(Self {
            x_min,
            x_max,
            n_x,
            t0,
            t1,
            n_t,
        })
    }

    /// Default grid for the unit-shift Gaussian example: x in [-6, 7], t in [0, 1].
    pub fn gaussian_default() -> Self {
        Self::new(-6.0, 7.0, 1024, 0.0, 1.0, 513).expect("default grid is valid")
    }

    /// Same domain with `factor` times finer spacing in both x and t.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(
            self.x_min,
            self.x_max,
            (self.n_x - 1) * factor + 1,
            self.t0,
            self.t1,
            (self.n_t - 1) * factor + 1,
        )
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn n_x(&self) -> usize {
        self.n_x
    }
    pub fn t0(&self) -> f64 {
        self.t0
    }
    pub fn t1(&self) -> f64 {
        self.t1
    }
    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_x - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        (self.t1 - self.t0) / (self.n_t - 1) as f64
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn t(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n_x).map(|i| self.x(i)).collect()
    }

    pub fn ts(&self) -> Vec<f64> {
        (0..self.n_t).map(|k| self.t(k)).collect()
    }

    /// Rectangle-rule integral `sum(v) * dx`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.dx()
    }

    /// Trapezoid-rule integral; this is the quantity conserved by the
    /// Fokker-Planck propagator.
    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        let n = values.len();
        if n == 0 {
            return 0.0;
        }
        let inner: f64 = values.iter().sum();
        (inner - 0.5 * (values[0] + values[n - 1])) * self.dx()
    }

    /// Nearest time-slice index for `t` (clamped to the grid).
    pub fn nearest_slice(&self, t: f64) -> usize {
        let k = ((t - self.t0) / self.dt()).round();
        k.clamp(0.0, (self.n_t - 1) as f64) as usize
    }
}

/// Action and mass scales. The worked example uses hbar = m = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    hbar: f64,
    mass: f64,
}

impl PhysicalConstants {
    pub fn new(hbar: f64, mass: f64) -> Result<Self> {
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "hbar must be positive, got {hbar}"
            )));
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "mass must be positive, got {mass}"
            )));
        }
        Ok(Self { hbar, mass })
    }

    pub fn unit() -> Self {
        Self {
            hbar: 1.0,
            mass: 1.0,
        }
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Diffusion coefficient hbar/m of the Nelson process.
    pub fn diffusion(&self) -> f64 {
        self.hbar / self.mass
    }

    pub fn is_unit(&self) -> bool {
        self.hbar == 1.0 && self.mass == 1.0
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::unit()
    }
}
