//! Grid solver for the Schrödinger system of a reference Nelson diffusion.
//!
//! `phi` solves the backward equation
//! `d_t phi + b . grad phi + (hbar / 2m) Lap phi = 0` and `phi_hat` the
//! forward Fokker-Planck equation
//! `d_t phi_hat + div(b phi_hat) - (hbar / 2m) Lap phi_hat = 0`, subject to
//! `phi phi_hat = rho0` at t0 and `phi phi_hat = rho1` at t1. The pair is
//! found by alternately rescaling the endpoint factors (Fortet iteration).
//!
//! When the log density of the reference is known the forward factor is
//! carried as the ratio `phi_hat / rho_ref`, which solves a transport
//! equation with the backward drift of the reference.
//!
//! Both equations are integrated with Crank-Nicolson in time. Space uses
//! fourth-order central stencils in the interior and second-order stencils
//! next to the ends. The forward equation is written in flux form with zero
//! flux through the ends, so the trapezoid mass is conserved to round-off.
//! The backward equation closes with linear extrapolation at the ends, which
//! keeps affine functions exact.

use std::fmt;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::field::{fmt17, gradient, MadelungPair, RealField};
use crate::grid::{PhysicalConstants, SpaceTimeGrid};

/// Floor applied to denominators in the endpoint ratio updates.
pub const DIVISION_FLOOR: f64 = 1e-300;

/// Negative values above `-NEGATIVE_TOLERANCE * max` are round-off in
/// underflowing tails and are clipped to [`DIVISION_FLOOR`] in the output.
pub const NEGATIVE_TOLERANCE: f64 = 1e-12;

/// Densities above this value must not meet a floored denominator.
pub const DIVISION_FLAG_DENSITY: f64 = 1e-10;

/// Largest admissible ratio of the bridge density at the domain ends to
/// its peak before a warning is recorded.
pub const BOUNDARY_MASS_RATIO: f64 = 1e-12;

type DriftFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// Forward drift `b(x, t)` of a diffusion.
#[derive(Clone)]
pub enum DriftField {
    Analytic(Arc<DriftFn>),
    /// Values on every time slice of `grid`; bilinear in between.
    Gridded {
        grid: SpaceTimeGrid,
        slices: Vec<Vec<f64>>,
    },
}

impl fmt::Debug for DriftField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriftField::Analytic(_) => f.write_str("DriftField::Analytic"),
            DriftField::Gridded { grid, .. } => f
                .debug_struct("DriftField::Gridded")
                .field("grid", grid)
                .finish(),
        }
    }
}

impl DriftField {
    pub fn analytic(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        DriftField::Analytic(Arc::new(f))
    }

    pub fn zero() -> Self {
        Self::analytic(|_, _| 0.0)
    }

    pub fn gridded(grid: SpaceTimeGrid, slices: Vec<Vec<f64>>) -> Result<Self> {
        if slices.len() != grid.n_t() {
            return Err(Error::LengthMismatch {
                expected: grid.n_t(),
                got: slices.len(),
            });
        }
        for s in &slices {
            if s.len() != grid.n_x() {
                return Err(Error::LengthMismatch {
                    expected: grid.n_x(),
                    got: s.len(),
                });
            }
            if let Some(i) = s.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(i));
            }
        }
        Ok(DriftField::Gridded { grid, slices })
    }

    /// Nelson forward drift `(1/m) grad S + (hbar/m) grad R`, one Madelung
    /// pair per time slice.
    pub fn from_madelung(pairs: &[MadelungPair], constants: PhysicalConstants) -> Result<Self> {
        let grid = *pairs
            .first()
            .ok_or(Error::GridTooSmall { needed: 2, got: 0 })?
            .grid();
        let inv_m = constants.mass().recip();
        let eps = constants.diffusion();
        let slices = pairs
            .iter()
            .map(|p| {
                let gs = gradient(p.s.values(), grid.dx())?;
                let gr = gradient(p.r.values(), grid.dx())?;
                Ok(gs
                    .iter()
                    .zip(&gr)
                    .map(|(s, r)| inv_m * s + eps * r)
                    .collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Self::gridded(grid, slices)
    }

    pub fn eval(&self, x: f64, t: f64) -> f64 {
        match self {
            DriftField::Analytic(f) => f(x, t),
            DriftField::Gridded { grid, slices } => {
                let (k, wt) = locate(t, grid.t0(), grid.dt(), grid.n_t());
                let (i, wx) = locate(x, grid.x_min(), grid.dx(), grid.n_x());
                let at = |s: &Vec<f64>| s[i] * (1.0 - wx) + s[i + 1] * wx;
                at(&slices[k]) * (1.0 - wt) + at(&slices[k + 1]) * wt
            }
        }
    }

    /// Drift at every spatial point of `grid` at time `t`.
    pub fn sample(&self, grid: &SpaceTimeGrid, t: f64) -> Vec<f64> {
        match self {
            DriftField::Gridded { grid: g, slices }
                if g.n_x() == grid.n_x()
                    && g.x_min() == grid.x_min()
                    && g.x_max() == grid.x_max() =>
            {
                let (k, wt) = locate(t, g.t0(), g.dt(), g.n_t());
                slices[k]
                    .iter()
                    .zip(&slices[k + 1])
                    .map(|(a, b)| a * (1.0 - wt) + b * wt)
                    .collect()
            }
            _ => (0..grid.n_x()).map(|i| self.eval(grid.x(i), t)).collect(),
        }
    }

    /// Drift of the same field shifted by a function of time only.
    pub fn plus_time_function(&self, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        let base = self.clone();
        Self::analytic(move |x, t| base.eval(x, t) + g(t))
    }
}

/// Cell index and fractional weight for linear interpolation, clamped.
fn locate(v: f64, start: f64, step: f64, n: usize) -> (usize, f64) {
    let s = ((v - start) / step).clamp(0.0, (n - 1) as f64);
    let i = (s.floor() as usize).min(n - 2);
    (i, s - i as f64)
}

/// Time-integration parameters of the propagators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeScheme {
    /// Crank-Nicolson steps per time slice of the grid.
    pub substeps: usize,
}

impl Default for PdeScheme {
    fn default() -> Self {
        Self { substeps: 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FortetConfig {
    pub max_iterations: usize,
    /// L1 tolerance on both boundary products.
    pub marginal_tolerance: f64,
    pub scheme: PdeScheme,
    /// Record wall-clock seconds in the diagnostics (otherwise zero, so that
    /// diagnostics are reproducible byte for byte).
    pub record_timings: bool,
}

impl Default for FortetConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            marginal_tolerance: 1e-8,
            scheme: PdeScheme::default(),
            record_timings: false,
        }
    }
}

impl FortetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidParameter(
                "max_iterations must be >= 1".into(),
            ));
        }
        if !(self.marginal_tolerance > 0.0) {
            return Err(Error::InvalidParameter(
                "marginal_tolerance must be positive".into(),
            ));
        }
        if self.scheme.substeps < 1 {
            return Err(Error::InvalidParameter("substeps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Pentadiagonal matrix; row `i` stores columns `i-2 ..= i+2`.
#[derive(Debug, Clone)]
struct Banded5 {
    rows: Vec<[f64; 5]>,
}

impl Banded5 {
    fn zeros(n: usize) -> Self {
        Self {
            rows: vec![[0.0; 5]; n],
        }
    }

    fn n(&self) -> usize {
        self.rows.len()
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        self.rows[i][j + 2 - i] += v;
    }

    fn mul(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n();
        for (i, row) in self.rows.iter().enumerate() {
            let mut acc = 0.0;
            for (o, a) in row.iter().enumerate() {
                let j = i as isize + o as isize - 2;
                if j >= 0 && (j as usize) < n {
                    acc += a * x[j as usize];
                }
            }
            out[i] = acc;
        }
    }

    /// Gaussian elimination without pivoting; overwrites the matrix.
    fn solve_in_place(&mut self, rhs: &mut [f64]) {
        let n = self.n();
        for k in 0..n {
            let pivot = self.rows[k][2];
            for r in (k + 1)..(k + 3).min(n) {
                let factor = self.rows[r][2 + k - r] / pivot;
                if factor == 0.0 {
                    continue;
                }
                for j in k..(k + 3).min(n) {
                    let v = self.rows[k][j + 2 - k];
                    self.rows[r][j + 2 - r] -= factor * v;
                }
                rhs[r] -= factor * rhs[k];
            }
        }
        for k in (0..n).rev() {
            let mut acc = rhs[k];
            if k + 1 < n {
                acc -= self.rows[k][3] * rhs[k + 1];
            }
            if k + 2 < n {
                acc -= self.rows[k][4] * rhs[k + 2];
            }
            rhs[k] = acc / self.rows[k][2];
        }
    }
}

const D1_4: [f64; 5] = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
const D2_4: [f64; 5] = [
    -1.0 / 12.0,
    16.0 / 12.0,
    -30.0 / 12.0,
    16.0 / 12.0,
    -1.0 / 12.0,
];

/// Generator of the backward equation, `b d_x + kappa d_xx`, for interior
/// rows. End rows are left empty; they carry the closing condition.
fn backward_generator(b: &[f64], kappa: f64, dx: f64) -> Banded5 {
    let n = b.len();
    let mut l = Banded5::zeros(n);
    let (i1, i2) = (1.0 / dx, 1.0 / (dx * dx));
    for i in 1..n - 1 {
        if i >= 2 && i + 2 < n {
            for o in 0..5 {
                let j = i + o - 2;
                l.add(i, j, b[i] * D1_4[o] * i1 + kappa * D2_4[o] * i2);
            }
        } else {
            l.add(i, i - 1, -0.5 * b[i] * i1 + kappa * i2);
            l.add(i, i, -2.0 * kappa * i2);
            l.add(i, i + 1, 0.5 * b[i] * i1 + kappa * i2);
        }
    }
    l
}

/// Coefficients of the flux `b phi_hat - kappa d_x phi_hat` through the
/// face between nodes `j` and `j + 1`.
fn face_flux(j: usize, b: &[f64], kappa: f64, dx: f64, mut emit: impl FnMut(usize, f64)) {
    let n = b.len();
    if j >= 1 && j + 2 < n {
        let adv = [-1.0 / 12.0, 7.0 / 12.0, 7.0 / 12.0, -1.0 / 12.0];
        let dif = [1.0 / 12.0, -15.0 / 12.0, 15.0 / 12.0, -1.0 / 12.0];
        for o in 0..4 {
            let m = j + o - 1;
            emit(m, adv[o] * b[m] - kappa * dif[o] / dx);
        }
    } else {
        emit(j, 0.5 * b[j] + kappa / dx);
        emit(j + 1, 0.5 * b[j + 1] - kappa / dx);
    }
}

/// Generator of the forward equation, `-d_x(b .) + kappa d_xx`, in flux
/// form with zero flux at both ends and half cells at the end nodes.
fn forward_generator(b: &[f64], kappa: f64, dx: f64) -> Banded5 {
    let n = b.len();
    let mut l = Banded5::zeros(n);
    for j in 0..n - 1 {
        // face j+1/2 leaves cell j and enters cell j+1
        let wl = if j == 0 { 2.0 / dx } else { 1.0 / dx };
        let wr = if j + 1 == n - 1 { 2.0 / dx } else { 1.0 / dx };
        face_flux(j, b, kappa, dx, |m, c| {
            l.add(j, m, -wl * c);
            l.add(j + 1, m, wr * c);
        });
    }
    l
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Direction {
    Backward,
    Forward,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Form {
    /// `a u' + kappa u''`, closed by linear extrapolation at both ends.
    Transport,
    /// `-(a u)' + kappa u''` with zero flux at both ends.
    Conservative,
}

/// Crank-Nicolson integration of `du/dtau = L(tau) u`, where `tau` runs
/// from the start slice towards the other end of the grid and `a(t)`
/// supplies the coefficient field of `L` at grid time `t`.
fn propagate(
    start: &RealField,
    a: &dyn Fn(f64) -> Vec<f64>,
    kappa: f64,
    form: Form,
    scheme: &PdeScheme,
    direction: Direction,
) -> Result<Vec<RealField>> {
    let grid = *start.grid();
    let n = grid.n_x();
    let nt = grid.n_t();
    let dx = grid.dx();
    let sub = scheme.substeps.max(1);
    let h = grid.dt() / sub as f64;
    let generator = |t: f64| {
        let coef = a(t);
        match form {
            Form::Transport => backward_generator(&coef, kappa, dx),
            Form::Conservative => forward_generator(&coef, kappa, dx),
        }
    };
    let (first, step): (usize, isize) = match direction {
        Direction::Backward => (nt - 1, -1),
        Direction::Forward => (0, 1),
    };

    let mut out: Vec<Option<RealField>> = vec![None; nt];
    out[first] = Some(start.clone());
    let mut u = start.values().to_vec();
    let mut rhs = vec![0.0; n];
    let mut l_old = generator(grid.t(first));
    for slice in 1..nt {
        let k_from = (first as isize + step * (slice as isize - 1)) as usize;
        let k = (first as isize + step * slice as isize) as usize;
        for s in 1..=sub {
            let t_new = if s == sub {
                grid.t(k)
            } else {
                grid.t(k_from) + step as f64 * s as f64 * h
            };
            let l_new = generator(t_new);
            l_old.mul(&u, &mut rhs);
            let mut lhs = Banded5::zeros(n);
            for i in 0..n {
                rhs[i] = u[i] + 0.5 * h * rhs[i];
                for o in 0..5 {
                    lhs.rows[i][o] = -0.5 * h * l_new.rows[i][o];
                }
                lhs.rows[i][2] += 1.0;
            }
            if form == Form::Transport {
                lhs.rows[0] = [0.0, 0.0, 1.0, -2.0, 1.0];
                lhs.rows[n - 1] = [1.0, -2.0, 1.0, 0.0, 0.0];
                rhs[0] = 0.0;
                rhs[n - 1] = 0.0;
            }
            lhs.solve_in_place(&mut rhs);
            std::mem::swap(&mut u, &mut rhs);
            l_old = l_new;
        }
        let peak = u.iter().fold(0.0f64, |a, v| a.max(*v));
        if let Some(i) = u
            .iter()
            .position(|v| !v.is_finite() || *v < -NEGATIVE_TOLERANCE * peak)
        {
            return Err(Error::SchemeInstability {
                slice: k,
                detail: format!("value {} at x = {}", u[i], grid.x(i)),
            });
        }
        // the unclipped state keeps propagating so that mass stays exact
        let stored = u.iter().map(|v| v.max(DIVISION_FLOOR)).collect();
        out[k] = Some(RealField::new(grid, stored)?);
    }
    Ok(out
        .into_iter()
        .map(|f| f.expect("every slice filled"))
        .collect())
}

/// Solve the backward equation from `terminal` at t1 down to t0; returns
/// one field per time slice, indexed by slice.
pub fn propagate_phi_backward(
    terminal: &RealField,
    drift: &DriftField,
    constants: PhysicalConstants,
    scheme: &PdeScheme,
) -> Result<Vec<RealField>> {
    check_start(terminal)?;
    let grid = *terminal.grid();
    let a = |t: f64| drift.sample(&grid, t);
    propagate(
        terminal,
        &a,
        0.5 * constants.diffusion(),
        Form::Transport,
        scheme,
        Direction::Backward,
    )
}

/// Solve the forward Fokker-Planck equation from `initial` at t0 up to t1
/// in conservative form.
pub fn propagate_phihat_forward(
    initial: &RealField,
    drift: &DriftField,
    constants: PhysicalConstants,
    scheme: &PdeScheme,
) -> Result<Vec<RealField>> {
    check_start(initial)?;
    let grid = *initial.grid();
    let a = |t: f64| drift.sample(&grid, t);
    propagate(
        initial,
        &a,
        0.5 * constants.diffusion(),
        Form::Conservative,
        scheme,
        Direction::Forward,
    )
}

/// Solve the forward equation for `phi_hat / rho_ref`, where `rho_ref` is
/// the reference density. The ratio solves
/// `d_t u = -b_minus . grad u + (hbar / 2m) Lap u` with the backward drift
/// `b_minus = b - (hbar/m) grad log rho_ref`. Returns the ratio per slice.
pub fn propagate_ratio_forward(
    initial: &RealField,
    reference: &ReferenceProcess,
    constants: PhysicalConstants,
    scheme: &PdeScheme,
) -> Result<Vec<RealField>> {
    check_start(initial)?;
    let grid = *initial.grid();
    if reference.log_density.is_none() {
        return Err(Error::InvalidParameter(
            "reference has no log density".into(),
        ));
    }
    let a = |t: f64| {
        reference
            .backward_drift(&grid, t, constants)
            .into_iter()
            .map(|v| -v)
            .collect()
    };
    propagate(
        initial,
        &a,
        0.5 * constants.diffusion(),
        Form::Transport,
        scheme,
        Direction::Forward,
    )
}

fn check_start(f: &RealField) -> Result<()> {
    if let Some(i) = f.values().iter().position(|v| !(*v > 0.0)) {
        return Err(Error::SchemeInstability {
            slice: 0,
            detail: format!("nonpositive start value at index {i}"),
        });
    }
    Ok(())
}

/// Reference diffusion: forward drift and, when known, the log of a density
/// it transports (up to a constant independent of time).
///
/// With the log density the forward factor is solved as a ratio to the
/// reference density, which stays smooth where `phi_hat` itself underflows.
#[derive(Debug, Clone)]
pub struct ReferenceProcess {
    drift: DriftField,
    log_density: Option<DriftField>,
}

impl ReferenceProcess {
    pub fn new(drift: DriftField) -> Self {
        Self {
            drift,
            log_density: None,
        }
    }

    pub fn with_log_density(drift: DriftField, log_density: DriftField) -> Self {
        Self {
            drift,
            log_density: Some(log_density),
        }
    }

    /// Nelson process of the wavefunction given by its Madelung pairs,
    /// one per time slice; the log density is `2R`.
    pub fn from_madelung(pairs: &[MadelungPair], constants: PhysicalConstants) -> Result<Self> {
        let drift = DriftField::from_madelung(pairs, constants)?;
        let grid = *pairs[0].grid();
        let log_density = pairs
            .iter()
            .map(|p| p.r.values().iter().map(|r| 2.0 * r).collect())
            .collect();
        Ok(Self::with_log_density(
            drift,
            DriftField::gridded(grid, log_density)?,
        ))
    }

    pub fn drift(&self) -> &DriftField {
        &self.drift
    }

    pub fn log_density(&self) -> Option<&DriftField> {
        self.log_density.as_ref()
    }

    /// `b - (hbar/m) grad log rho_ref` on the grid at time `t`.
    fn backward_drift(
        &self,
        grid: &SpaceTimeGrid,
        t: f64,
        constants: PhysicalConstants,
    ) -> Vec<f64> {
        let b = self.drift.sample(grid, t);
        let Some(ld) = &self.log_density else {
            return b;
        };
        let g = gradient4(&ld.sample(grid, t), grid.dx());
        let eps = constants.diffusion();
        b.iter().zip(&g).map(|(b, g)| b - eps * g).collect()
    }
}

/// Fourth-order central gradient, second order at the two nodes next to
/// each end and one-sided at the ends.
fn gradient4(f: &[f64], dx: f64) -> Vec<f64> {
    let n = f.len();
    let mut g = vec![0.0; n];
    for i in 0..n {
        g[i] = if i >= 2 && i + 2 < n {
            (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * dx)
        } else if i == 0 {
            (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dx)
        } else if i == n - 1 {
            (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * dx)
        } else {
            (f[i + 1] - f[i - 1]) / (2.0 * dx)
        };
    }
    g
}

/// One row of the Fortet diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub err_t0: f64,
    pub err_t1: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct BridgeSolution {
    pub phi: Vec<RealField>,
    pub phi_hat: Vec<RealField>,
    pub iterations: usize,
    pub final_marginal_error: f64,
    pub history: Vec<IterationRecord>,
    /// Number of floored denominators met where the target density
    /// exceeded [`DIVISION_FLAG_DENSITY`].
    pub flagged_divisions: usize,
    /// Largest deviation from one of `int phi phi_hat dx` over the slices
    /// before `phi_hat` was rescaled to unit pairing on every slice.
    pub pairing_drift: f64,
    pub warnings: Vec<String>,
}

impl BridgeSolution {
    pub fn grid(&self) -> &SpaceTimeGrid {
        self.phi[0].grid()
    }

    /// `phi * phi_hat` on slice `k`.
    pub fn product(&self, k: usize) -> Result<RealField> {
        self.phi[k].zip_with(&self.phi_hat[k], |a, b| a * b)
    }

    /// Writes `iter,err_t0,err_t1,seconds`.
    pub fn write_diagnostics<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iter,err_t0,err_t1,seconds")?;
        for r in &self.history {
            writeln!(
                w,
                "{},{},{},{}",
                r.iter,
                fmt17(r.err_t0),
                fmt17(r.err_t1),
                fmt17(r.seconds)
            )?;
        }
        Ok(())
    }
}

/// `int a b dx`.
fn pairing(grid: &SpaceTimeGrid, a: &[f64], b: &[f64]) -> f64 {
    grid.integrate(&a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>())
}

/// `int |a b / scale - target| dx`.
fn l1_distance(grid: &SpaceTimeGrid, a: &[f64], b: &[f64], target: &[f64], scale: f64) -> f64 {
    grid.integrate(
        &a.iter()
            .zip(b)
            .zip(target)
            .map(|((x, y), z)| (x * y / scale - z).abs())
            .collect::<Vec<_>>(),
    )
}

fn guarded_ratio(target: &[f64], denom: &[f64], flagged: &mut usize) -> Vec<f64> {
    target
        .iter()
        .zip(denom)
        .map(|(&r, &d)| {
            if d < DIVISION_FLOOR {
                if r > DIVISION_FLAG_DENSITY {
                    *flagged += 1;
                }
                r / DIVISION_FLOOR
            } else {
                r / d
            }
        })
        .collect()
}

/// `exp(ln a - ln b - c)` without forming `b exp(c)`, which may underflow.
fn log_ratio(a: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .zip(c)
        .map(|((a, b), c)| (a.ln() - b.ln() - c).exp())
        .collect()
}

fn weight(u: &[f64], log_rho: &[f64]) -> Vec<f64> {
    u.iter().zip(log_rho).map(|(u, l)| u * l.exp()).collect()
}

/// Fortet iteration for the Schrödinger system with marginals `rho0`, `rho1`.
pub fn solve_bridge(
    rho0: &RealField,
    rho1: &RealField,
    reference: &ReferenceProcess,
    constants: PhysicalConstants,
    config: &FortetConfig,
) -> Result<BridgeSolution> {
    solve_bridge_logged(rho0, rho1, reference, constants, config, &mut |_| {})
}

/// As [`solve_bridge`], handing every iteration record to `log` as it is
/// produced, so that a failed run still leaves its history behind.
pub fn solve_bridge_logged(
    rho0: &RealField,
    rho1: &RealField,
    reference: &ReferenceProcess,
    constants: PhysicalConstants,
    config: &FortetConfig,
    log: &mut dyn FnMut(&IterationRecord),
) -> Result<BridgeSolution> {
    config.validate()?;
    for rho in [rho0, rho1] {
        if !rho.is_density() {
            return Err(Error::InvalidDensity(
                "boundary marginals must be normalized densities".into(),
            ));
        }
        rho.check_positive()?;
    }
    let grid = *rho0.grid();
    let last = grid.n_t() - 1;
    let drift = &reference.drift;
    let log_rho = |k: usize| {
        reference
            .log_density
            .as_ref()
            .map(|ld| ld.sample(&grid, grid.t(k)))
    };
    let (log_rho0, log_rho1) = (log_rho(0), log_rho(last));
    let start = Instant::now();
    let mut flagged = 0usize;
    let mut history = Vec::new();

    let ones = RealField::constant(grid, 1.0)?;
    let mut phi = propagate_phi_backward(&ones, drift, constants, &config.scheme)?;
    let mut last_error = f64::INFINITY;
    let mut previous_err_t0 = f64::INFINITY;
    for iter in 1..=config.max_iterations {
        let (phi_hat0, phi_hat1, forward) = match (&log_rho0, &log_rho1) {
            (Some(l0), Some(l1)) => {
                let u0 = RealField::new(grid, log_ratio(rho0.values(), phi[0].values(), l0))?;
                let u = propagate_ratio_forward(&u0, reference, constants, &config.scheme)?;
                (
                    weight(u0.values(), l0),
                    weight(u[last].values(), l1),
                    Forward::Ratio(u),
                )
            }
            _ => {
                let h0 = RealField::new(
                    grid,
                    guarded_ratio(rho0.values(), phi[0].values(), &mut flagged),
                )?;
                let h = propagate_phihat_forward(&h0, drift, constants, &config.scheme)?;
                (
                    h0.into_values(),
                    h[last].values().to_vec(),
                    Forward::Plain(h),
                )
            }
        };
        let phi1 = match &forward {
            Forward::Ratio(u) => log_ratio(
                rho1.values(),
                u[last].values(),
                log_rho1.as_deref().unwrap_or_default(),
            ),
            Forward::Plain(_) => guarded_ratio(rho1.values(), &phi_hat1, &mut flagged),
        };
        phi = propagate_phi_backward(
            &RealField::new(grid, phi1)?,
            drift,
            constants,
            &config.scheme,
        )?;

        // The two sweeps are independent discretizations, so the pairing
        // of phi and phi_hat drifts by the truncation error between t1 and
        // t0; the t0 product is compared after removing that scale.
        let pairing0 = pairing(&grid, phi[0].values(), &phi_hat0);
        let err_t0 = l1_distance(&grid, phi[0].values(), &phi_hat0, rho0.values(), pairing0);
        let err_t1 = l1_distance(&grid, phi[last].values(), &phi_hat1, rho1.values(), 1.0);
        let seconds = if config.record_timings {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        let record = IterationRecord {
            iter,
            err_t0,
            err_t1,
            seconds,
        };
        log(&record);
        history.push(record);
        last_error = err_t0.max(err_t1);
        if err_t0 > previous_err_t0 * (1.0 + 1e-6) && err_t0 > 1e2 * config.marginal_tolerance {
            return Err(Error::SchemeInstability {
                slice: 0,
                detail: format!("marginal error grew from {previous_err_t0:e} to {err_t0:e} at iteration {iter}"),
            });
        }
        previous_err_t0 = err_t0;
        if err_t0 <= config.marginal_tolerance && err_t1 <= config.marginal_tolerance {
            let mut phi_hat = match forward {
                Forward::Plain(h) => h,
                Forward::Ratio(u) => u
                    .iter()
                    .enumerate()
                    .map(|(k, uk)| {
                        let l = log_rho(k).expect("ratio form has a log density");
                        RealField::new(grid, weight(uk.values(), &l))
                    })
                    .collect::<Result<_>>()?,
            };
            phi_hat[0] = RealField::new(grid, phi_hat0)?;
            let mut pairing_drift = 0.0f64;
            for (p, h) in phi.iter().zip(phi_hat.iter_mut()) {
                let pk = pairing(&grid, p.values(), h.values());
                pairing_drift = pairing_drift.max((pk - 1.0).abs());
                *h = h.map(|v| v / pk)?;
            }
            let mut warnings = Vec::new();
            if flagged > 0 {
                warnings.push(format!("{flagged} floored divisions where the target density exceeds {DIVISION_FLAG_DENSITY:e}"));
            }
            let sol = BridgeSolution {
                phi,
                phi_hat,
                iterations: iter,
                final_marginal_error: last_error,
                history,
                flagged_divisions: flagged,
                pairing_drift,
                warnings,
            };
            return Ok(with_boundary_warnings(sol));
        }
    }
    Err(Error::NoConvergence {
        iterations: config.max_iterations,
        last_error,
    })
}

enum Forward {
    Plain(Vec<RealField>),
    Ratio(Vec<RealField>),
}

fn with_boundary_warnings(mut sol: BridgeSolution) -> BridgeSolution {
    for k in 0..sol.phi.len() {
        let Ok(p) = sol.product(k) else { continue };
        let v = p.values();
        let peak = p.max();
        let edge = v[0].max(v[v.len() - 1]);
        if edge > BOUNDARY_MASS_RATIO * peak {
            sol.warnings.push(format!(
                "slice {k}: bridge density at the domain edge is {:.3e} of its peak",
                edge / peak
            ));
            break;
        }
    }
    sol
}

/// Forward drift of the bridge: `b + (hbar/m) grad log phi` on every slice.
pub fn bridge_drift(
    drift: &DriftField,
    phi: &[RealField],
    constants: PhysicalConstants,
) -> Result<DriftField> {
    let grid = *phi
        .first()
        .ok_or(Error::GridTooSmall { needed: 2, got: 0 })?
        .grid();
    let eps = constants.diffusion();
    let mut slices = Vec::with_capacity(phi.len());
    for (k, p) in phi.iter().enumerate() {
        if let Some(i) = p.values().iter().position(|v| !(*v > 0.0)) {
            return Err(Error::NonpositivePhi(p.values()[i], i));
        }
        let log_phi: Vec<f64> = p.values().iter().map(|v| v.ln()).collect();
        let g = gradient(&log_phi, grid.dx())?;
        let b = drift.sample(&grid, grid.t(k));
        slices.push(b.iter().zip(&g).map(|(b, g)| b + eps * g).collect());
    }
    DriftField::gridded(grid, slices)
}
