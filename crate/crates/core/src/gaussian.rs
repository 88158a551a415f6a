//! Closed-form bridge for shifting the mean of a Gaussian packet by one unit
//! over t in [0, 1], in units hbar = m = 1.
//!
//! The reference evolution is the Gaussian packet
//! `psi(x, t) = exp(R + i S)` with `R = -omega (x - m(t))^2 / 2`,
//! `S = c x + d(t)`, `m(t) = m1 + m2 t`, `c = m2` and `d(t) = d1 t`.
//! Its Schrödinger system is solved by
//! `phi = exp(beta(t) x + gamma(t))` and
//! `phi_hat = exp(-omega x^2 + beta_hat(t) x + gamma_hat(t))`.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{fmt17, MadelungPair, RealField};
use crate::grid::SpaceTimeGrid;
use crate::schrodinger::{DriftField, ReferenceProcess};

/// Guard on the common denominator of the phase-matched constants.
pub const DENOMINATOR_GUARD: f64 = 1e-12;

/// Packet widths `1 / sqrt(2 omega)` kept between the means and the
/// edges of the default domain.
pub const DOMAIN_PADDING: f64 = 13.0;

/// Finite-difference step used by [`verify_ode_systems`].
pub const ODE_FD_STEP: f64 = 1e-4;

/// Gate on the ODE residuals.
pub const ODE_RESIDUAL_GATE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianConfig {
    omega: f64,
}

impl GaussianConfig {
    pub fn new(omega: f64) -> Result<Self> {
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "omega must be positive, got {omega}"
            )));
        }
        Ok(Self { omega })
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub const fn t0(&self) -> f64 {
        0.0
    }

    pub const fn t1(&self) -> f64 {
        1.0
    }
}

impl Default for GaussianConfig {
    fn default() -> Self {
        Self { omega: PI }
    }
}

/// Parameters of the reference Gaussian evolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceParams {
    pub omega: f64,
    pub m1: f64,
    pub m2: f64,
    pub d1: f64,
}

impl ReferenceParams {
    /// Drift constant `c = dm/dt`.
    pub fn c(&self) -> f64 {
        self.m2
    }

    pub fn d0(&self) -> f64 {
        0.0
    }

    pub fn mean(&self, t: f64) -> f64 {
        self.m1 + self.m2 * t
    }

    /// Integer-bounded interval holding the reference and bridge means
    /// over [0, 1] with [`DOMAIN_PADDING`] packet widths to spare;
    /// [-6, 7] at omega = pi.
    pub fn covering_domain(&self) -> (f64, f64) {
        let pad = DOMAIN_PADDING * (0.5 / self.omega).sqrt();
        let (a, b) = (self.mean(0.0), self.mean(1.0));
        (
            (a.min(b).min(0.0) - pad).floor(),
            (a.max(b).max(1.0) + pad).ceil(),
        )
    }

    pub fn d(&self, t: f64) -> f64 {
        self.d1 * t
    }

    /// Log-amplitude of the unnormalized packet.
    pub fn r(&self, x: f64, t: f64) -> f64 {
        let y = x - self.mean(t);
        -0.5 * self.omega * y * y
    }

    pub fn s(&self, x: f64, t: f64) -> f64 {
        self.c() * x + self.d(t)
    }

    /// Reference wavefunction `exp(R + i S)` (unnormalized).
    pub fn psi(&self, x: f64, t: f64) -> Complex64 {
        Complex64::from_polar(self.r(x, t).exp(), self.s(x, t))
    }

    /// Reference wavefunction times `(omega / pi)^{1/4}`, unit norm.
    pub fn psi_normalized(&self, x: f64, t: f64) -> Complex64 {
        self.psi(x, t) * (self.omega / PI).powf(0.25)
    }

    /// Nelson forward drift `dS/dx + dR/dx = c - omega (x - m(t))`.
    pub fn drift(&self, x: f64, t: f64) -> f64 {
        self.c() - self.omega * (x - self.mean(t))
    }

    /// Potential under which the packet solves the Schrödinger equation:
    /// `V = omega^2 (x - m(t))^2 / 2 - omega / 2 - d'(t) - c^2 / 2`.
    pub fn potential(&self, x: f64, t: f64) -> f64 {
        let y = x - self.mean(t);
        0.5 * self.omega * self.omega * y * y
            - 0.5 * self.omega
            - self.d1
            - 0.5 * self.c() * self.c()
    }

    /// Nelson process of the packet, with `2R` as its log density.
    pub fn process(self) -> ReferenceProcess {
        ReferenceProcess::with_log_density(
            DriftField::analytic(move |x, t| self.drift(x, t)),
            DriftField::analytic(move |x, t| 2.0 * self.r(x, t)),
        )
    }

    /// Normalized marginal density `|psi|^2`.
    pub fn density(&self, x: f64, t: f64) -> f64 {
        let y = x - self.mean(t);
        (self.omega / PI).sqrt() * (-self.omega * y * y).exp()
    }
}

/// Phase-matched constants of the reference evolution and bridge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolvedConstants {
    pub omega: f64,
    pub m1: f64,
    pub m2: f64,
    pub beta0: f64,
    pub gamma0: f64,
    pub d0: f64,
    pub d1: f64,
}

/// Residuals of the four phase-matching conditions and the beta0 relation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseResiduals {
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    pub u4: f64,
    pub beta0: f64,
}

impl PhaseResiduals {
    pub fn max_abs(&self) -> f64 {
        [self.u1, self.u2, self.u3, self.u4, self.beta0]
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

impl SolvedConstants {
    pub fn reference(&self) -> ReferenceParams {
        ReferenceParams {
            omega: self.omega,
            m1: self.m1,
            m2: self.m2,
            d1: self.d1,
        }
    }

    pub fn coefficients(&self) -> BridgeCoefficients {
        BridgeCoefficients {
            omega: self.omega,
            m1: self.m1,
            m2: self.m2,
            beta0: self.beta0,
            gamma0: self.gamma0,
        }
    }

    pub fn residuals(&self) -> PhaseResiduals {
        let w = self.omega;
        let co = self.coefficients();
        let s = self.m1 + self.m2;
        let beta0_rel = 2.0 * w * (1.0 + self.m1 * (-w).exp() - s) / (w.exp() - (-w).exp());
        PhaseResiduals {
            u1: self.m2 + w * self.m1 + self.beta0,
            u2: self.gamma0 - 0.5 * w * self.m1 * self.m1 + self.d0,
            u3: self.m2 + w * s + co.beta(1.0) - w,
            // phase matching at t = 1 gives -(omega/2)(m1 + m2)^2 here
            u4: -0.5 * w * s * s + co.gamma(1.0) + 0.5 * w + self.d1,
            beta0: self.beta0 - beta0_rel,
        }
    }

    /// Writes the header and one row:
    /// `omega,m1,m2,beta0,gamma0,d0,d1,res_u1,res_u2,res_u3,res_u4`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let r = self.residuals();
        writeln!(
            w,
            "omega,m1,m2,beta0,gamma0,d0,d1,res_u1,res_u2,res_u3,res_u4"
        )?;
        let row = [
            self.omega,
            self.m1,
            self.m2,
            self.beta0,
            self.gamma0,
            self.d0,
            self.d1,
            r.u1,
            r.u2,
            r.u3,
            r.u4,
        ];
        let cells: Vec<String> = row.iter().map(|v| fmt17(*v)).collect();
        writeln!(w, "{}", cells.join(","))
    }
}

/// Closed-form phase-matched constants for width parameter `omega`.
pub fn solve_constants(omega: f64) -> Result<SolvedConstants> {
    GaussianConfig::new(omega)?;
    let e = omega.exp();
    let den = 2.0 - 2.0 * e + omega + omega * e;
    if !(den.abs() >= DENOMINATOR_GUARD) {
        return Err(Error::DegenerateDenominator(den));
    }
    Ok(SolvedConstants {
        omega,
        m1: -(e - 1.0) / den,
        m2: omega * (e + 1.0) / den,
        beta0: -2.0 * omega / den,
        gamma0: 0.5 * omega * (e - 1.0).powi(2) / (den * den),
        d0: 0.0,
        d1: -omega * (1.0 + e) * (1.0 - e + omega + omega * e) / (den * den),
    })
}

/// Coefficients of the exponents of `phi` and `phi_hat`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeCoefficients {
    pub omega: f64,
    pub m1: f64,
    pub m2: f64,
    pub beta0: f64,
    pub gamma0: f64,
}

impl BridgeCoefficients {
    /// Same coefficients with a different (free) `gamma0`.
    pub fn with_gamma0(mut self, gamma0: f64) -> Self {
        self.gamma0 = gamma0;
        self
    }

    fn mean(&self, t: f64) -> f64 {
        self.m1 + self.m2 * t
    }

    pub fn alpha(&self, _t: f64) -> f64 {
        0.0
    }

    pub fn alpha_hat(&self, _t: f64) -> f64 {
        -self.omega
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.beta0 * (self.omega * t).exp()
    }

    pub fn beta_hat(&self, t: f64) -> f64 {
        let w = self.omega;
        2.0 * w * self.mean(t) - (-w * t).exp() * (self.beta0 + 2.0 * w * self.m1)
    }

    pub fn gamma(&self, t: f64) -> f64 {
        let w = self.omega;
        let b0 = self.beta0;
        self.gamma0
            + b0 * b0 / (4.0 * w) * (1.0 - (2.0 * w * t).exp())
            + b0 * (self.m1 - (w * t).exp() * self.mean(t))
    }

    pub fn gamma_hat(&self, t: f64) -> f64 {
        let w = self.omega;
        let b0 = self.beta0;
        let decay = (-2.0 * w * t).exp();
        let u = (w * t).exp() * self.mean(t) - self.m1;
        -self.gamma0
            + (b0 * b0 * (1.0 - decay) + 4.0 * b0 * w * decay * u - 4.0 * w * w * decay * u * u)
                / (4.0 * w)
    }

    /// Constraint residuals at t = 0: `alpha+alpha_hat+omega`, `beta+beta_hat`,
    /// `gamma+gamma_hat`.
    pub fn initial_constraints(&self) -> [f64; 3] {
        [
            self.alpha(0.0) + self.alpha_hat(0.0) + self.omega,
            self.beta(0.0) + self.beta_hat(0.0),
            self.gamma(0.0) + self.gamma_hat(0.0),
        ]
    }

    /// Constraint residuals at t = 1: `alpha+alpha_hat+omega`,
    /// `beta+beta_hat-2 omega`, `gamma+gamma_hat+omega`.
    pub fn final_constraints(&self) -> [f64; 3] {
        [
            self.alpha(1.0) + self.alpha_hat(1.0) + self.omega,
            self.beta(1.0) + self.beta_hat(1.0) - 2.0 * self.omega,
            self.gamma(1.0) + self.gamma_hat(1.0) + self.omega,
        ]
    }
}

/// Reference evolution together with its closed-form Schrödinger system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBridgeSolution {
    pub config: GaussianConfig,
    pub constants: SolvedConstants,
    pub reference: ReferenceParams,
    pub coefficients: BridgeCoefficients,
}

impl GaussianBridgeSolution {
    pub fn new(config: GaussianConfig) -> Result<Self> {
        let constants = solve_constants(config.omega())?;
        Ok(Self {
            config,
            constants,
            reference: constants.reference(),
            coefficients: constants.coefficients(),
        })
    }

    pub fn omega(&self) -> f64 {
        self.config.omega()
    }

    pub fn psi(&self, x: f64, t: f64) -> Complex64 {
        self.reference.psi(x, t)
    }

    pub fn log_phi(&self, x: f64, t: f64) -> f64 {
        let c = &self.coefficients;
        c.alpha(t) * x * x + c.beta(t) * x + c.gamma(t)
    }

    pub fn log_phi_hat(&self, x: f64, t: f64) -> f64 {
        let c = &self.coefficients;
        c.alpha_hat(t) * x * x + c.beta_hat(t) * x + c.gamma_hat(t)
    }

    pub fn phi(&self, x: f64, t: f64) -> f64 {
        self.log_phi(x, t).exp()
    }

    pub fn phi_hat(&self, x: f64, t: f64) -> f64 {
        self.log_phi_hat(x, t).exp()
    }

    /// Unnormalized bridge density `phi * phi_hat`; equals `exp(-omega x^2)`
    /// at t = 0 and `exp(-omega (x-1)^2)` at t = 1.
    pub fn bridge_density(&self, x: f64, t: f64) -> f64 {
        (self.log_phi(x, t) + self.log_phi_hat(x, t)).exp()
    }

    /// Bridge density scaled by `(omega / pi)^{1/2}`.
    pub fn bridge_density_normalized(&self, x: f64, t: f64) -> f64 {
        (self.omega() / PI).sqrt() * self.bridge_density(x, t)
    }

    /// Mean of the bridge marginal, `(beta + beta_hat) / (2 omega)`.
    pub fn bridge_mean(&self, t: f64) -> f64 {
        let c = &self.coefficients;
        (c.beta(t) + c.beta_hat(t)) / (2.0 * self.omega())
    }

    pub fn bridge_variance(&self) -> f64 {
        0.5 / self.omega()
    }

    /// Forward drift of the bridge, `c - omega (x - m(t)) + beta(t)`.
    pub fn bridge_drift(&self, x: f64, t: f64) -> f64 {
        self.reference.drift(x, t) + self.coefficients.beta(t)
    }

    /// Controlled phase `S + R + (1/2) log(phi / phi_hat)`.
    pub fn s_tilde(&self, x: f64, t: f64) -> f64 {
        self.reference.s(x, t)
            + self.reference.r(x, t)
            + 0.5 * (self.log_phi(x, t) - self.log_phi_hat(x, t))
    }

    /// Controlled log-amplitude of the normalized bridge density.
    pub fn r_tilde(&self, x: f64, t: f64) -> f64 {
        0.5 * ((self.omega() / PI).sqrt().ln() + self.log_phi(x, t) + self.log_phi_hat(x, t))
    }

    /// Normalized controlled wavefunction.
    pub fn psi_tilde(&self, x: f64, t: f64) -> Complex64 {
        Complex64::from_polar(self.r_tilde(x, t).exp(), self.s_tilde(x, t))
    }

    /// Boundary wavefunctions: the normalized ground state and its unit shift.
    pub fn psi_initial(&self, x: f64) -> Complex64 {
        let w = self.omega();
        Complex64::new((w / PI).powf(0.25) * (-0.5 * w * x * x).exp(), 0.0)
    }

    pub fn psi_final(&self, x: f64) -> Complex64 {
        self.psi_initial(x - 1.0)
    }

    /// `|psi_initial|^2` and `|psi_final|^2` sampled on `grid` and normalized
    /// there.
    pub fn boundary_densities(&self, grid: SpaceTimeGrid) -> Result<(RealField, RealField)> {
        let sample =
            |f: &dyn Fn(f64) -> Complex64| grid.xs().iter().map(|&x| f(x).norm_sqr()).collect();
        Ok((
            RealField::normalized_density(grid, sample(&|x| self.psi_initial(x)))?,
            RealField::normalized_density(grid, sample(&|x| self.psi_final(x)))?,
        ))
    }

    /// Reference Madelung pairs `(R, S)` on every slice of `grid`.
    pub fn reference_pairs(&self, grid: SpaceTimeGrid) -> Result<Vec<MadelungPair>> {
        let r = self.reference;
        grid.ts()
            .into_iter()
            .map(|t| {
                MadelungPair::new(
                    RealField::from_fn(grid, |x| r.r(x, t))?,
                    RealField::from_fn(grid, |x| r.s(x, t))?,
                )
            })
            .collect()
    }

    /// Reference potential on every slice of `grid`.
    pub fn reference_potentials(&self, grid: SpaceTimeGrid) -> Result<Vec<RealField>> {
        let r = self.reference;
        grid.ts()
            .into_iter()
            .map(|t| RealField::from_fn(grid, |x| r.potential(x, t)))
            .collect()
    }

    /// `phi` and `phi_hat` on every slice of `grid`, with `phi_hat` scaled so
    /// that `int phi phi_hat dx = 1`.
    pub fn factors(&self, grid: SpaceTimeGrid) -> Result<(Vec<RealField>, Vec<RealField>)> {
        let norm = (self.omega() / PI).sqrt();
        let mut phi = Vec::with_capacity(grid.n_t());
        let mut phi_hat = Vec::with_capacity(grid.n_t());
        for t in grid.ts() {
            phi.push(RealField::from_fn(grid, |x| self.phi(x, t))?);
            phi_hat.push(RealField::from_fn(grid, |x| norm * self.phi_hat(x, t))?);
        }
        Ok((phi, phi_hat))
    }

    /// Relative sup-norm distance of numeric factors from the closed form on
    /// `|x| <= window`, maximized over slices. The free scale
    /// `phi -> c phi`, `phi_hat -> phi_hat / c` is fixed by least squares on
    /// the first slice.
    pub fn factor_error(
        &self,
        phi: &[RealField],
        phi_hat: &[RealField],
        window: f64,
    ) -> Result<FactorError> {
        let grid = *phi
            .first()
            .ok_or(Error::GridTooSmall { needed: 1, got: 0 })?
            .grid();
        if phi.len() != grid.n_t() || phi_hat.len() != grid.n_t() {
            return Err(Error::LengthMismatch {
                expected: grid.n_t(),
                got: phi.len().min(phi_hat.len()),
            });
        }
        let inside: Vec<usize> = (0..grid.n_x())
            .filter(|&i| grid.x(i).abs() <= window)
            .collect();
        if inside.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "no grid points within |x| <= {window}"
            )));
        }
        let (num, den) = inside.iter().fold((0.0, 0.0), |(n, d), &i| {
            let e = self.phi(grid.x(i), grid.t0());
            (n + e * phi[0].values()[i], d + e * e)
        });
        let gauge = num / den;
        let norm = (self.omega() / PI).sqrt();
        let (mut e_phi, mut e_hat) = (0.0f64, 0.0f64);
        for k in 0..grid.n_t() {
            let t = grid.t(k);
            let (mut dp, mut sp, mut dh, mut sh) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
            for &i in &inside {
                let x = grid.x(i);
                let p = gauge * self.phi(x, t);
                let h = norm * self.phi_hat(x, t) / gauge;
                dp = dp.max((phi[k].values()[i] - p).abs());
                sp = sp.max(p.abs());
                dh = dh.max((phi_hat[k].values()[i] - h).abs());
                sh = sh.max(h.abs());
            }
            e_phi = e_phi.max(dp / sp);
            e_hat = e_hat.max(dh / sh);
        }
        Ok(FactorError {
            phi: e_phi,
            phi_hat: e_hat,
            gauge,
        })
    }

    /// Path part of the relative entropy of the bridge over the reference,
    /// `int beta(t)^2 / 2 dt = beta0^2 (e^{2 omega} - 1) / (4 omega)`.
    pub fn path_entropy(&self) -> f64 {
        let w = self.omega();
        let b0 = self.coefficients.beta0;
        b0 * b0 * (2.0 * w).exp_m1() / (4.0 * w)
    }

    /// Relative entropy of the initial marginals, `omega m1^2`: both are
    /// Gaussian with variance `1 / (2 omega)`, centred at 0 and `m1`.
    pub fn marginal_entropy(&self) -> f64 {
        self.omega() * self.reference.m1.powi(2)
    }

    /// Bound on the trapezoid error of the path entropy integrand
    /// `beta(t)^2 / 2` at step `dt`: `dt^2 (t1 - t0) max|f''| / 12` with
    /// `f'' = 4 omega^2 f`, largest at the end that maximizes `|beta|`.
    pub fn path_entropy_quadrature_bound(&self, dt: f64) -> f64 {
        let w = self.omega();
        let c = &self.coefficients;
        let f_max = 0.5 * c.beta(0.0).powi(2).max(c.beta(1.0).powi(2));
        dt * dt * 4.0 * w * w * f_max / 12.0
    }
}

/// Outcome of [`GaussianBridgeSolution::factor_error`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorError {
    pub phi: f64,
    pub phi_hat: f64,
    pub gauge: f64,
}

impl FactorError {
    pub fn max(&self) -> f64 {
        self.phi.max(self.phi_hat)
    }
}

/// Maximum absolute residual of each of the six coefficient ODEs, in the
/// order alpha, beta, gamma, alpha_hat, beta_hat, gamma_hat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeResidualReport {
    pub max_residuals: [f64; 6],
    pub n_check: usize,
}

impl OdeResidualReport {
    pub fn max(&self) -> f64 {
        self.max_residuals.iter().fold(0.0f64, |a, v| a.max(*v))
    }

    pub fn passed(&self) -> bool {
        self.max() < ODE_RESIDUAL_GATE
    }
}

/// Five-point central difference at step `h`.
fn central_derivative(f: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
    (8.0 * (f(t + h) - f(t - h)) - (f(t + 2.0 * h) - f(t - 2.0 * h))) / (12.0 * h)
}

/// Residuals of the two coefficient ODE systems at `n_check` equally spaced
/// times in [0, 1], with time derivatives from central differences.
pub fn verify_ode_systems(
    solution: &GaussianBridgeSolution,
    n_check: usize,
) -> Result<OdeResidualReport> {
    if n_check < 10 {
        return Err(Error::InvalidParameter(format!(
            "n_check must be >= 10, got {n_check}"
        )));
    }
    let co = &solution.coefficients;
    let w = solution.omega();
    let c = solution.reference.c();
    let h = ODE_FD_STEP;
    let mut max = [0.0f64; 6];
    for k in 0..n_check {
        let t = k as f64 / (n_check - 1) as f64;
        let m = solution.reference.mean(t);
        let (a, b) = (co.alpha(t), co.beta(t));
        let (ah, bh) = (co.alpha_hat(t), co.beta_hat(t));
        let da = central_derivative(|s| co.alpha(s), t, h);
        let db = central_derivative(|s| co.beta(s), t, h);
        let dg = central_derivative(|s| co.gamma(s), t, h);
        let dah = central_derivative(|s| co.alpha_hat(s), t, h);
        let dbh = central_derivative(|s| co.beta_hat(s), t, h);
        let dgh = central_derivative(|s| co.gamma_hat(s), t, h);
        let res = [
            da - 2.0 * a * w + 2.0 * a * a,
            db + 2.0 * a * c + 2.0 * a * w * m - w * b + 2.0 * a * b,
            dg + c * b + w * b * m + 0.5 * b * b + a,
            dah - 2.0 * ah * w - 2.0 * ah * ah,
            dbh + 2.0 * ah * c + 2.0 * ah * w * m - w * bh - 2.0 * ah * bh,
            dgh - w + c * bh + w * bh * m - 0.5 * bh * bh - ah,
        ];
        for (mx, r) in max.iter_mut().zip(res) {
            *mx = mx.max(r.abs());
        }
    }
    Ok(OdeResidualReport {
        max_residuals: max,
        n_check,
    })
}
