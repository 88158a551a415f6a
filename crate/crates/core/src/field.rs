//! Real and complex fields on a single time slice, the Madelung
//! decomposition, finite-difference operators and the quantum potential.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{PhysicalConstants, SpaceTimeGrid};

/// Tolerance on the unit integral of normalized wavefunctions and densities.
pub const NORMALIZATION_TOL: f64 = 1e-8;

/// Below this modulus the logarithm of a wavefunction is refused.
pub const MIN_AMPLITUDE: f64 = 1e-300;

/// Largest log-amplitude accepted by [`madelung_compose`].
pub const MAX_LOG_AMPLITUDE: f64 = 300.0;

/// Real function sampled on one time slice.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    grid: SpaceTimeGrid,
    values: Vec<f64>,
    density: bool,
}

impl RealField {
    pub fn new(grid: SpaceTimeGrid, values: Vec<f64>) -> Result<Self> {
        check_len(&grid, values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            grid,
            values,
            density: false,
        })
    }

    pub fn from_fn(grid: SpaceTimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.xs().into_iter().map(f).collect())
    }

    pub fn constant(grid: SpaceTimeGrid, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.n_x()])
    }

    /// A probability density: strictly positive, unit integral within
    /// [`NORMALIZATION_TOL`].
    pub fn density(grid: SpaceTimeGrid, values: Vec<f64>) -> Result<Self> {
        let mut f = Self::new(grid, values)?;
        f.check_positive()?;
        let mass = grid.integrate(&f.values);
        if (mass - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized(mass));
        }
        f.density = true;
        Ok(f)
    }

    /// Rescale a positive field to unit integral and flag it as a density.
    pub fn normalized_density(grid: SpaceTimeGrid, values: Vec<f64>) -> Result<Self> {
        let f = Self::new(grid, values)?;
        f.check_positive()?;
        let mass = grid.integrate(&f.values);
        Self::density(grid, f.values.into_iter().map(|v| v / mass).collect())
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_density(&self) -> bool {
        self.density
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &RealField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        check_len(&self.grid, other.len())?;
        Self::new(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn check_positive(&self) -> Result<()> {
        match self.values.iter().position(|&v| v <= 0.0) {
            Some(i) => Err(Error::NonpositiveDensity(self.values[i], i)),
            None => Ok(()),
        }
    }

    pub fn gradient(&self) -> Result<RealField> {
        Self::new(self.grid, gradient(&self.values, self.grid.dx())?)
    }

    pub fn laplacian(&self) -> Result<RealField> {
        Self::new(self.grid, laplacian(&self.values, self.grid.dx())?)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "x,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", fmt17(self.grid.x(i)), fmt17(*v))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Complex wavefunction sampled on one time slice.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    grid: SpaceTimeGrid,
    values: Vec<Complex64>,
    normalized: bool,
}

impl WaveField {
    pub fn new(grid: SpaceTimeGrid, values: Vec<Complex64>) -> Result<Self> {
        check_len(&grid, values.len())?;
        if let Some(i) = values
            .iter()
            .position(|v| !(v.re.is_finite() && v.im.is_finite()))
        {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            grid,
            values,
            normalized: false,
        })
    }

    pub fn from_fn(grid: SpaceTimeGrid, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        Self::new(grid, grid.xs().into_iter().map(f).collect())
    }

    /// Flag as normalized after checking `sum |psi|^2 dx = 1` within tolerance.
    pub fn into_normalized(mut self) -> Result<Self> {
        let norm = self.norm_squared();
        if (norm - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized(norm));
        }
        self.normalized = true;
        Ok(self)
    }

    /// Rescale to unit norm and flag as normalized.
    pub fn normalize(self) -> Result<Self> {
        let norm = self.norm_squared();
        if !(norm > 0.0) {
            return Err(Error::NotNormalized(norm));
        }
        let scale = norm.sqrt().recip();
        Self::new(self.grid, self.values.iter().map(|v| v * scale).collect())?.into_normalized()
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.dx()
    }

    pub fn modulus(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "x,re,im")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(
                w,
                "{},{},{}",
                fmt17(self.grid.x(i)),
                fmt17(v.re),
                fmt17(v.im)
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Log-amplitude `r` and phase action `s` with psi = exp(r + i s / hbar).
#[derive(Debug, Clone, PartialEq)]
pub struct MadelungPair {
    pub r: RealField,
    pub s: RealField,
}

impl MadelungPair {
    pub fn new(r: RealField, s: RealField) -> Result<Self> {
        check_len(r.grid(), s.len())?;
        Ok(Self { r, s })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        self.r.grid()
    }
}

/// R = log|psi|, S = hbar * unwrapped arg(psi), with the unwrapping anchored
/// at the leftmost grid point where S lies in (-pi hbar, pi hbar].
pub fn madelung_decompose(psi: &WaveField, constants: PhysicalConstants) -> Result<MadelungPair> {
    let values = psi.values();
    if let Some(i) = values.iter().position(|v| v.norm() < MIN_AMPLITUDE) {
        return Err(Error::ZeroAmplitude(i));
    }
    let r: Vec<f64> = values.iter().map(|v| v.norm().ln()).collect();
    let mut phase = Vec::with_capacity(values.len());
    let mut acc = values[0].arg();
    phase.push(acc);
    for w in values.windows(2) {
        // increment of the argument between neighbours, in (-pi, pi]
        acc += (w[1] * w[0].conj()).arg();
        phase.push(acc);
    }
    let hbar = constants.hbar();
    let s = phase.into_iter().map(|p| hbar * p).collect();
    MadelungPair::new(
        RealField::new(*psi.grid(), r)?,
        RealField::new(*psi.grid(), s)?,
    )
}

/// Pointwise psi = exp(R + i S / hbar).
pub fn madelung_compose(pair: &MadelungPair, constants: PhysicalConstants) -> Result<WaveField> {
    let r = pair.r.values();
    if let Some(i) = r.iter().position(|&v| v > MAX_LOG_AMPLITUDE) {
        return Err(Error::Overflow(r[i], i));
    }
    let inv_hbar = constants.hbar().recip();
    let values = r
        .iter()
        .zip(pair.s.values())
        .map(|(&r, &s)| Complex64::from_polar(r.exp(), s * inv_hbar))
        .collect();
    WaveField::new(*pair.grid(), values)
}

/// rho = |psi|^2; flagged as a density only if psi was normalized.
pub fn density(psi: &WaveField) -> Result<RealField> {
    let values: Vec<f64> = psi.values().iter().map(|v| v.norm_sqr()).collect();
    if psi.is_normalized() {
        RealField::density(*psi.grid(), values)
    } else {
        RealField::new(*psi.grid(), values)
    }
}

/// Second-order first derivative; one-sided second-order stencils at the ends.
pub fn gradient(f: &[f64], dx: f64) -> Result<Vec<f64>> {
    let n = f.len();
    if n < 5 {
        return Err(Error::GridTooSmall { needed: 5, got: n });
    }
    let h2 = 2.0 * dx;
    let mut out = vec![0.0; n];
    out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / h2;
    for i in 1..n - 1 {
        out[i] = (f[i + 1] - f[i - 1]) / h2;
    }
    out[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / h2;
    Ok(out)
}

/// Second-order second derivative; one-sided second-order stencils at the ends.
pub fn laplacian(f: &[f64], dx: f64) -> Result<Vec<f64>> {
    let n = f.len();
    if n < 5 {
        return Err(Error::GridTooSmall { needed: 5, got: n });
    }
    let inv = 1.0 / (dx * dx);
    let mut out = vec![0.0; n];
    out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) * inv;
    for i in 1..n - 1 {
        out[i] = (f[i + 1] - 2.0 * f[i] + f[i - 1]) * inv;
    }
    out[n - 1] = (2.0 * f[n - 1] - 5.0 * f[n - 2] + 4.0 * f[n - 3] - f[n - 4]) * inv;
    Ok(out)
}

/// Complex Laplacian, applied to real and imaginary parts separately.
pub fn laplacian_complex(f: &[Complex64], dx: f64) -> Result<Vec<Complex64>> {
    let re: Vec<f64> = f.iter().map(|v| v.re).collect();
    let im: Vec<f64> = f.iter().map(|v| v.im).collect();
    let lr = laplacian(&re, dx)?;
    let li = laplacian(&im, dx)?;
    Ok(lr
        .into_iter()
        .zip(li)
        .map(|(a, b)| Complex64::new(a, b))
        .collect())
}

pub fn gradient_complex(f: &[Complex64], dx: f64) -> Result<Vec<Complex64>> {
    let re: Vec<f64> = f.iter().map(|v| v.re).collect();
    let im: Vec<f64> = f.iter().map(|v| v.im).collect();
    let gr = gradient(&re, dx)?;
    let gi = gradient(&im, dx)?;
    Ok(gr
        .into_iter()
        .zip(gi)
        .map(|(a, b)| Complex64::new(a, b))
        .collect())
}

/// Discretized Carlen action `int int |grad psi|^2 dx dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteAction {
    pub value: f64,
    pub finite: bool,
}

/// Trapezoid rule in time over the slices, rectangle rule in space.
/// Slices are taken to be equally spaced on the grid's time axis.
pub fn finite_action(psis: &[WaveField]) -> Result<FiniteAction> {
    if psis.len() < 2 {
        return Err(Error::GridTooSmall {
            needed: 2,
            got: psis.len(),
        });
    }
    let grid = psis[0].grid();
    let dt = (grid.t1() - grid.t0()) / (psis.len() - 1) as f64;
    let mut per_slice = Vec::with_capacity(psis.len());
    for psi in psis {
        let g = gradient_complex(psi.values(), psi.grid().dx())?;
        per_slice.push(g.iter().map(|v| v.norm_sqr()).sum::<f64>() * psi.grid().dx());
    }
    let n = per_slice.len();
    let value = dt * (per_slice.iter().sum::<f64>() - 0.5 * (per_slice[0] + per_slice[n - 1]));
    Ok(FiniteAction {
        value,
        finite: value.is_finite(),
    })
}

/// `Delta sqrt(rho) / sqrt(rho)` with the module's Laplacian.
pub fn sqrt_density_curvature(rho: &RealField) -> Result<Vec<f64>> {
    rho.check_positive()?;
    let amp: Vec<f64> = rho.values().iter().map(|v| v.sqrt()).collect();
    let lap = laplacian(&amp, rho.grid().dx())?;
    Ok(lap.into_iter().zip(&amp).map(|(l, a)| l / a).collect())
}

/// Quantum potential `-(hbar^2 / 2m) Delta sqrt(rho) / sqrt(rho)`.
pub fn quantum_potential(rho: &RealField, constants: PhysicalConstants) -> Result<RealField> {
    let k = -constants.hbar().powi(2) / (2.0 * constants.mass());
    let curv = sqrt_density_curvature(rho)?;
    RealField::new(*rho.grid(), curv.into_iter().map(|c| k * c).collect())
}

/// Wrap a phase into (-pi, pi].
pub fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Scientific notation with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn check_len(grid: &SpaceTimeGrid, got: usize) -> Result<()> {
    if got != grid.n_x() {
        return Err(Error::LengthMismatch {
            expected: grid.n_x(),
            got,
        });
    }
    Ok(())
}
