//! Controlled quantum evolution built from a solved Schrödinger bridge.
//!
//! Given the reference evolution `psi = exp(R + i S / hbar)` and the bridge
//! factors `phi`, `phi_hat`:
//!
//! * `S~ = S + hbar R + (hbar / 2) log(phi / phi_hat)`
//! * `R~ = log(phi phi_hat) / 2`
//! * `psi~ = exp(R~ + i S~ / hbar)`
//! * `V_c = V - V_i + (hbar^2 / m) [curv(rho~) - curv(rho)]` with
//!   `curv(rho) = Lap sqrt(rho) / sqrt(rho)`.
//!
//! `psi~` solves the Schrödinger equation with potential `V_i + V_c`, its
//! Nelson process is the bridge, and `|psi~|^2` interpolates the endpoint
//! densities.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{
    gradient, laplacian, laplacian_complex, madelung_compose, MadelungPair, RealField, WaveField,
};
use crate::grid::{PhysicalConstants, SpaceTimeGrid};
use crate::schrodinger::DriftField;

/// Relative residual of the discretized Schrödinger equation divided by
/// `dx^2 + dt^2`, measured on the plane wave `exp(i (p x - p^2 t / 2))` with
/// `p = pi` and `hbar = m = 1`, on the default grid with the space and
/// time errors added in absolute value. See [`plane_wave_constant`].
pub const PLANE_WAVE_RESIDUAL_CONSTANT: f64 = 4.427;

/// Wavenumber of the calibration plane wave.
pub const CALIBRATION_WAVENUMBER: f64 = std::f64::consts::PI;

/// Densities below this fraction of their peak are excluded from the
/// endpoint modulus and phase checks.
pub const SUPPORT_FRACTION: f64 = 1e-10;

/// Controlled evolution on every time slice of a grid.
#[derive(Debug, Clone)]
pub struct ControlledEvolution {
    /// `R~` and `S~` per slice.
    pub tilde: Vec<MadelungPair>,
    pub psi_tilde: Vec<WaveField>,
    pub rho_tilde: Vec<RealField>,
    /// Reference potential, ambient potential and controlling potential per
    /// slice; empty until [`ControlledEvolution::with_control`] is called.
    pub v: Vec<RealField>,
    pub v_i: Vec<RealField>,
    pub v_c: Vec<RealField>,
}

impl ControlledEvolution {
    pub fn grid(&self) -> &SpaceTimeGrid {
        self.psi_tilde[0].grid()
    }

    pub fn n_slices(&self) -> usize {
        self.psi_tilde.len()
    }

    /// Attach `V`, `V_i` and the controlling potential computed from the
    /// reference densities `exp(2R)`.
    pub fn with_control(
        mut self,
        reference: &[MadelungPair],
        v: Vec<RealField>,
        v_i: Vec<RealField>,
        constants: PhysicalConstants,
    ) -> Result<Self> {
        let n = self.n_slices();
        for len in [reference.len(), v.len(), v_i.len()] {
            if len != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        let log_rho: Vec<RealField> = reference
            .iter()
            .map(|p| p.r.map(|r| 2.0 * r))
            .collect::<Result<_>>()?;
        let log_rho_tilde: Vec<RealField> = self
            .tilde
            .iter()
            .map(|p| p.r.map(|r| 2.0 * r))
            .collect::<Result<_>>()?;
        self.v_c = control_potential_log(&v, &v_i, &log_rho, &log_rho_tilde, constants)?;
        self.v = v;
        self.v_i = v_i;
        Ok(self)
    }

    /// `V_i + V_c` per slice.
    pub fn total_potential(&self) -> Result<Vec<RealField>> {
        self.v_i
            .iter()
            .zip(&self.v_c)
            .map(|(a, b)| a.zip_with(b, |x, y| x + y))
            .collect()
    }
}

/// Build `S~`, `R~`, `psi~` and `rho~` from the reference Madelung pairs and
/// the bridge factors, one of each per time slice.
pub fn assemble_tilde(
    reference: &[MadelungPair],
    phi: &[RealField],
    phi_hat: &[RealField],
    constants: PhysicalConstants,
) -> Result<ControlledEvolution> {
    let n = reference.len();
    if n == 0 {
        return Err(Error::GridTooSmall { needed: 1, got: 0 });
    }
    for len in [phi.len(), phi_hat.len()] {
        if len != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: len,
            });
        }
    }
    let hbar = constants.hbar();
    let mut tilde = Vec::with_capacity(n);
    let mut psi_tilde = Vec::with_capacity(n);
    let mut rho_tilde = Vec::with_capacity(n);
    for ((pair, p), h) in reference.iter().zip(phi).zip(phi_hat) {
        let grid = *pair.grid();
        let log_p = positive_log(p)?;
        let log_h = positive_log(h)?;
        let s = pair
            .s
            .values()
            .iter()
            .zip(pair.r.values())
            .zip(log_p.iter().zip(&log_h))
            .map(|((s, r), (lp, lh))| s + hbar * r + 0.5 * hbar * (lp - lh))
            .collect();
        let r: Vec<f64> = log_p
            .iter()
            .zip(&log_h)
            .map(|(lp, lh)| 0.5 * (lp + lh))
            .collect();
        let rho: Vec<f64> = r.iter().map(|r| (2.0 * r).exp()).collect();
        let rho = match RealField::density(grid, rho.clone()) {
            Ok(d) => d,
            Err(Error::NotNormalized(_)) => RealField::new(grid, rho)?,
            Err(e) => return Err(e),
        };
        let pair = MadelungPair::new(RealField::new(grid, r)?, RealField::new(grid, s)?)?;
        let psi = madelung_compose(&pair, constants)?;
        psi_tilde.push(if rho.is_density() {
            psi.into_normalized()?
        } else {
            psi
        });
        tilde.push(pair);
        rho_tilde.push(rho);
    }
    Ok(ControlledEvolution {
        tilde,
        psi_tilde,
        rho_tilde,
        v: Vec::new(),
        v_i: Vec::new(),
        v_c: Vec::new(),
    })
}

fn positive_log(f: &RealField) -> Result<Vec<f64>> {
    if let Some(i) = f.values().iter().position(|v| !(*v > 0.0)) {
        return Err(Error::NonpositivePhi(f.values()[i], i));
    }
    Ok(f.values().iter().map(|v| v.ln()).collect())
}

/// `Lap sqrt(rho) / sqrt(rho)` from `L = log rho`, as `Lap L / 2 + |grad L|^2 / 4`.
/// Exact for Gaussians and free of underflow in the tails.
pub fn log_density_curvature(log_rho: &[f64], dx: f64) -> Result<Vec<f64>> {
    let g = gradient(log_rho, dx)?;
    let l = laplacian(log_rho, dx)?;
    Ok(g.iter()
        .zip(&l)
        .map(|(g, l)| 0.5 * l + 0.25 * g * g)
        .collect())
}

/// Controlling potential for densities given pointwise.
pub fn control_potential(
    v: &[RealField],
    v_i: &[RealField],
    rho: &[RealField],
    rho_tilde: &[RealField],
    constants: PhysicalConstants,
) -> Result<Vec<RealField>> {
    let log = |fields: &[RealField]| -> Result<Vec<RealField>> {
        fields
            .iter()
            .map(|f| {
                if let Some(i) = f.values().iter().position(|v| !(*v > 0.0)) {
                    return Err(Error::NonpositiveDensity(f.values()[i], i));
                }
                f.map(f64::ln)
            })
            .collect()
    };
    control_potential_log(v, v_i, &log(rho)?, &log(rho_tilde)?, constants)
}

/// Controlling potential from log densities.
pub fn control_potential_log(
    v: &[RealField],
    v_i: &[RealField],
    log_rho: &[RealField],
    log_rho_tilde: &[RealField],
    constants: PhysicalConstants,
) -> Result<Vec<RealField>> {
    let n = v.len();
    for len in [v_i.len(), log_rho.len(), log_rho_tilde.len()] {
        if len != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: len,
            });
        }
    }
    let k = constants.hbar().powi(2) / constants.mass();
    (0..n)
        .map(|j| {
            let grid = *v[j].grid();
            let ct = log_density_curvature(log_rho_tilde[j].values(), grid.dx())?;
            let cr = log_density_curvature(log_rho[j].values(), grid.dx())?;
            let values = (0..grid.n_x())
                .map(|i| v[j].values()[i] - v_i[j].values()[i] + k * (ct[i] - cr[i]))
                .collect();
            RealField::new(grid, values)
        })
        .collect()
}

/// Largest violation over all slices and points of
/// `V_c - (hbar^2/m) curv(rho~) = V - V_i - (hbar^2/m) curv(rho)`.
pub fn curvature_invariance_error(
    evolution: &ControlledEvolution,
    reference: &[MadelungPair],
    constants: PhysicalConstants,
) -> Result<f64> {
    let k = constants.hbar().powi(2) / constants.mass();
    let mut worst = 0.0f64;
    for j in 0..evolution.v_c.len() {
        let dx = evolution.grid().dx();
        let lt: Vec<f64> = evolution.tilde[j]
            .r
            .values()
            .iter()
            .map(|r| 2.0 * r)
            .collect();
        let lr: Vec<f64> = reference[j].r.values().iter().map(|r| 2.0 * r).collect();
        let ct = log_density_curvature(&lt, dx)?;
        let cr = log_density_curvature(&lr, dx)?;
        for i in 0..ct.len() {
            let lhs = evolution.v_c[j].values()[i] - k * ct[i];
            let rhs = evolution.v[j].values()[i] - evolution.v_i[j].values()[i] - k * cr[i];
            worst = worst.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
        }
    }
    Ok(worst)
}

/// Largest `|(1/m) grad S~ + (hbar/m) grad R~ - b|` over all slices.
pub fn drift_consistency_error(
    evolution: &ControlledEvolution,
    bridge: &DriftField,
    constants: PhysicalConstants,
) -> Result<f64> {
    let grid = *evolution.grid();
    let inv_m = constants.mass().recip();
    let eps = constants.diffusion();
    let mut worst = 0.0f64;
    for (k, pair) in evolution.tilde.iter().enumerate() {
        let gs = gradient(pair.s.values(), grid.dx())?;
        let gr = gradient(pair.r.values(), grid.dx())?;
        let b = bridge.sample(&grid, grid.t(k));
        for i in 0..grid.n_x() {
            worst = worst.max((inv_m * gs[i] + eps * gr[i] - b[i]).abs());
        }
    }
    Ok(worst)
}

/// Largest `||psi~| - |psi_target||` where the target density exceeds
/// [`SUPPORT_FRACTION`] of its peak.
pub fn boundary_modulus_error(psi_tilde: &WaveField, target: &WaveField) -> f64 {
    let peak = target
        .values()
        .iter()
        .map(|v| v.norm_sqr())
        .fold(0.0, f64::max);
    psi_tilde
        .values()
        .iter()
        .zip(target.values())
        .filter(|(_, t)| t.norm_sqr() > SUPPORT_FRACTION * peak)
        .map(|(a, t)| (a.norm() - t.norm()).abs())
        .fold(0.0, f64::max)
}

/// Offset and spread of `S~ - S_target` on the support of `rho~`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseMatch {
    /// Global phase `S~ - S_target` at the density peak.
    pub offset: f64,
    /// Largest deviation from `offset` on the support.
    pub spread: f64,
}

pub fn phase_match(pair: &MadelungPair, target_phase: &RealField) -> PhaseMatch {
    let r = pair.r.values();
    let peak_index = (0..r.len())
        .max_by(|&a, &b| r[a].total_cmp(&r[b]))
        .unwrap_or(0);
    let cutoff = r[peak_index] + 0.5 * SUPPORT_FRACTION.ln();
    let diff = |i: usize| pair.s.values()[i] - target_phase.values()[i];
    let offset = diff(peak_index);
    let spread = (0..r.len())
        .filter(|&i| r[i] > cutoff)
        .map(|i| (diff(i) - offset).abs())
        .fold(0.0, f64::max);
    PhaseMatch { offset, spread }
}

fn time_derivative(fields: &[&[f64]], k: usize, dt: f64) -> Vec<f64> {
    let n = fields.len();
    let m = fields[0].len();
    (0..m)
        .map(|i| {
            if k == 0 {
                (-3.0 * fields[0][i] + 4.0 * fields[1][i] - fields[2][i]) / (2.0 * dt)
            } else if k == n - 1 {
                (3.0 * fields[n - 1][i] - 4.0 * fields[n - 2][i] + fields[n - 3][i]) / (2.0 * dt)
            } else {
                (fields[k + 1][i] - fields[k - 1][i]) / (2.0 * dt)
            }
        })
        .collect()
}

/// Residual fields of the continuity and Hamilton-Jacobi equations of a
/// Madelung evolution.
#[derive(Debug, Clone)]
pub struct MadelungResiduals {
    /// `d_t R + (1/m) grad R . grad S + (1/2m) Lap S`
    pub continuity: Vec<RealField>,
    /// `d_t S + (1/2m) |grad S|^2 + V - (hbar^2/2m) (|grad R|^2 + Lap R)`
    pub hamilton_jacobi: Vec<RealField>,
}

impl MadelungResiduals {
    /// Largest absolute value on the interior points of every slice.
    pub fn max_abs(&self) -> (f64, f64) {
        let interior = |fs: &[RealField]| {
            fs.iter()
                .flat_map(|f| {
                    let v = f.values();
                    v[1..v.len() - 1]
                        .iter()
                        .map(|x| x.abs())
                        .collect::<Vec<_>>()
                })
                .fold(0.0, f64::max)
        };
        (interior(&self.continuity), interior(&self.hamilton_jacobi))
    }
}

fn check_slices(pairs: &[MadelungPair]) -> Result<SpaceTimeGrid> {
    if pairs.len() < 3 {
        return Err(Error::GridTooSmall {
            needed: 3,
            got: pairs.len(),
        });
    }
    Ok(*pairs[0].grid())
}

/// Residuals of the Madelung system for pairs on consecutive time slices.
pub fn madelung_residuals(
    pairs: &[MadelungPair],
    v: &[RealField],
    constants: PhysicalConstants,
) -> Result<MadelungResiduals> {
    let grid = check_slices(pairs)?;
    if v.len() != pairs.len() {
        return Err(Error::LengthMismatch {
            expected: pairs.len(),
            got: v.len(),
        });
    }
    let (dx, dt) = (grid.dx(), grid.dt());
    let inv_m = constants.mass().recip();
    let q = constants.hbar().powi(2) * 0.5 * inv_m;
    let rs: Vec<&[f64]> = pairs.iter().map(|p| p.r.values()).collect();
    let ss: Vec<&[f64]> = pairs.iter().map(|p| p.s.values()).collect();
    let mut continuity = Vec::with_capacity(pairs.len());
    let mut hamilton_jacobi = Vec::with_capacity(pairs.len());
    for k in 0..pairs.len() {
        let dr = time_derivative(&rs, k, dt);
        let ds = time_derivative(&ss, k, dt);
        let (gr, lr) = (gradient(rs[k], dx)?, laplacian(rs[k], dx)?);
        let (gs, ls) = (gradient(ss[k], dx)?, laplacian(ss[k], dx)?);
        let c = (0..grid.n_x())
            .map(|i| dr[i] + inv_m * gr[i] * gs[i] + 0.5 * inv_m * ls[i])
            .collect();
        let h = (0..grid.n_x())
            .map(|i| {
                ds[i] + 0.5 * inv_m * gs[i] * gs[i] + v[k].values()[i] - q * (gr[i] * gr[i] + lr[i])
            })
            .collect();
        continuity.push(RealField::new(grid, c)?);
        hamilton_jacobi.push(RealField::new(grid, h)?);
    }
    Ok(MadelungResiduals {
        continuity,
        hamilton_jacobi,
    })
}

/// Potential under which the pairs solve the Hamilton-Jacobi equation of
/// the Madelung system, slice by slice.
pub fn extract_potential(
    pairs: &[MadelungPair],
    constants: PhysicalConstants,
) -> Result<Vec<RealField>> {
    let grid = check_slices(pairs)?;
    let zero = vec![RealField::constant(grid, 0.0)?; pairs.len()];
    let res = madelung_residuals(pairs, &zero, constants)?;
    res.hamilton_jacobi.iter().map(|h| h.map(|v| -v)).collect()
}

/// Least-squares quadratic fit `a x^2 + b x + c` and its largest residual.
pub fn quadratic_fit(f: &RealField) -> ([f64; 3], f64) {
    let grid = f.grid();
    let xs = grid.xs();
    // normal equations on the centered, scaled abscissa
    let mid = 0.5 * (grid.x_min() + grid.x_max());
    let half = 0.5 * grid.width();
    let mut a = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for (x, y) in xs.iter().zip(f.values()) {
        let u = (x - mid) / half;
        let basis = [1.0, u, u * u];
        for r in 0..3 {
            for c in 0..3 {
                a[r][c] += basis[r] * basis[c];
            }
            rhs[r] += basis[r] * y;
        }
    }
    let coef = solve3(a, rhs);
    // back to powers of x
    let (c0, c1, c2) = (coef[0], coef[1] / half, coef[2] / (half * half));
    let q = [c2, c1 - 2.0 * c2 * mid, c0 - c1 * mid + c2 * mid * mid];
    let worst = xs
        .iter()
        .zip(f.values())
        .map(|(x, y)| (q[0] * x * x + q[1] * x + q[2] - y).abs())
        .fold(0.0, f64::max);
    (q, worst)
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for k in 0..3 {
        let p = (k..3)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .unwrap_or(k);
        a.swap(k, p);
        b.swap(k, p);
        for r in k + 1..3 {
            let f = a[r][k] / a[k][k];
            for c in k..3 {
                a[r][c] -= f * a[k][c];
            }
            b[r] -= f * b[k];
        }
    }
    let mut x = [0.0; 3];
    for k in (0..3).rev() {
        let s: f64 = (k + 1..3).map(|c| a[k][c] * x[c]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

/// Outcome of [`verify_schrodinger`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchrodingerReport {
    /// Largest interior residual divided by the largest `|psi|`.
    pub relative_residual: f64,
    /// `constant * (dx^2 + dt^2)`.
    pub threshold: f64,
    pub dx: f64,
    pub dt: f64,
}

impl SchrodingerReport {
    pub fn passed(&self) -> bool {
        self.relative_residual <= self.threshold
    }
}

/// Residual of `d_t psi = (i hbar / 2m) Lap psi - (i / hbar) V psi` with
/// central differences in time and space on interior slices and points,
/// judged against `constant * (dx^2 + dt^2)`.
pub fn verify_schrodinger(
    psi: &[WaveField],
    v_total: &[RealField],
    constants: PhysicalConstants,
    constant: f64,
) -> Result<SchrodingerReport> {
    if psi.len() < 3 {
        return Err(Error::GridTooSmall {
            needed: 3,
            got: psi.len(),
        });
    }
    if v_total.len() != psi.len() {
        return Err(Error::LengthMismatch {
            expected: psi.len(),
            got: v_total.len(),
        });
    }
    let grid = *psi[0].grid();
    let (dx, dt) = (grid.dx(), grid.dt());
    let kin = Complex64::new(0.0, 0.5 * constants.hbar() / constants.mass());
    let pot = Complex64::new(0.0, 1.0 / constants.hbar());
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for k in 1..psi.len() - 1 {
        let lap = laplacian_complex(psi[k].values(), dx)?;
        let p = psi[k].values();
        for i in 1..grid.n_x() - 1 {
            let dpsi = (psi[k + 1].values()[i] - psi[k - 1].values()[i]) / (2.0 * dt);
            let r = dpsi - kin * lap[i] + pot * v_total[k].values()[i] * p[i];
            worst = worst.max(r.norm());
            scale = scale.max(p[i].norm());
        }
    }
    let relative_residual = if scale > 0.0 { worst / scale } else { worst };
    Ok(SchrodingerReport {
        relative_residual,
        threshold: constant * (dx * dx + dt * dt),
        dx,
        dt,
    })
}

/// Plane-wave calibration of the residual constant on `grid`: the space and
/// time truncation errors of the plane wave with wavenumber `p` are
/// measured separately (each with the other derivative exact) and added.
pub fn plane_wave_constant(grid: &SpaceTimeGrid, p: f64) -> Result<f64> {
    let omega = 0.5 * p * p;
    let (dx, dt) = (grid.dx(), grid.dt());
    let wave = |x: f64, t: f64| Complex64::from_polar(1.0, p * x - omega * t);
    // time error alone: exact Laplacian -p^2 psi
    let t = grid.t(1);
    let x = grid.x(grid.n_x() / 2);
    let dpsi = (wave(x, t + dt) - wave(x, t - dt)) / (2.0 * dt);
    let time_err = (dpsi + Complex64::i() * omega * wave(x, t)).norm();
    // space error alone: exact time derivative -i omega psi
    let slices: Vec<WaveField> = (0..3)
        .map(|k| WaveField::from_fn(*grid, |x| wave(x, grid.t(k))))
        .collect::<Result<_>>()?;
    let lap = laplacian_complex(slices[1].values(), dx)?;
    let i = grid.n_x() / 2;
    let space_err = (Complex64::new(0.0, 0.5) * lap[i]
        + Complex64::new(0.0, 0.5) * p * p * slices[1].values()[i])
        .norm();
    Ok((time_err + space_err) / (dx * dx + dt * dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{GaussianBridgeSolution, GaussianConfig};
    use std::f64::consts::PI;

    fn grid() -> SpaceTimeGrid {
        SpaceTimeGrid::new(-6.0, 7.0, 513, 0.0, 1.0, 129).unwrap()
    }

    fn closed_form(
        g: SpaceTimeGrid,
    ) -> (
        GaussianBridgeSolution,
        Vec<MadelungPair>,
        Vec<RealField>,
        Vec<RealField>,
    ) {
        let sol = GaussianBridgeSolution::new(GaussianConfig::default()).unwrap();
        let r = sol.reference;
        let norm = (sol.omega() / PI).sqrt();
        let mut pairs = Vec::new();
        let mut phi = Vec::new();
        let mut phi_hat = Vec::new();
        for k in 0..g.n_t() {
            let t = g.t(k);
            pairs.push(
                MadelungPair::new(
                    RealField::from_fn(g, |x| r.r(x, t)).unwrap(),
                    RealField::from_fn(g, |x| r.s(x, t)).unwrap(),
                )
                .unwrap(),
            );
            phi.push(RealField::from_fn(g, |x| sol.phi(x, t)).unwrap());
            phi_hat.push(RealField::from_fn(g, |x| norm * sol.phi_hat(x, t)).unwrap());
        }
        (sol, pairs, phi, phi_hat)
    }

    fn reference_potential(sol: &GaussianBridgeSolution, g: SpaceTimeGrid) -> Vec<RealField> {
        (0..g.n_t())
            .map(|k| RealField::from_fn(g, |x| sol.reference.potential(x, g.t(k))).unwrap())
            .collect()
    }

    #[test]
    fn stored_constant_matches_calibration() {
        let c = plane_wave_constant(&SpaceTimeGrid::gaussian_default(), CALIBRATION_WAVENUMBER)
            .unwrap();
        assert!((c - PLANE_WAVE_RESIDUAL_CONSTANT).abs() < 1e-3, "{c}");
    }

    #[test]
    fn tilde_fields_of_closed_form() {
        let g = grid();
        let (sol, pairs, phi, phi_hat) = closed_form(g);
        let ev = assemble_tilde(&pairs, &phi, &phi_hat, PhysicalConstants::unit()).unwrap();
        for k in 0..g.n_t() {
            assert!(ev.rho_tilde[k].is_density(), "slice {k}");
            assert!(ev.psi_tilde[k].is_normalized());
            for i in 0..g.n_x() {
                let x = g.x(i);
                let t = g.t(k);
                let rho = ev.rho_tilde[k].values()[i];
                assert!(
                    (rho - (2.0 * ev.tilde[k].r.values()[i]).exp()).abs()
                        <= 1e-12 * rho.max(1e-300)
                );
                assert!(
                    (ev.tilde[k].s.values()[i] - sol.s_tilde(x, t)).abs()
                        < 1e-12 * (1.0 + sol.s_tilde(x, t).abs())
                );
            }
        }
        let last = g.n_t() - 1;
        let psi0 = WaveField::from_fn(g, |x| sol.psi_initial(x)).unwrap();
        let psi1 = WaveField::from_fn(g, |x| sol.psi_final(x)).unwrap();
        assert!(boundary_modulus_error(&ev.psi_tilde[0], &psi0) < 1e-6);
        assert!(boundary_modulus_error(&ev.psi_tilde[last], &psi1) < 1e-6);
        let zero = RealField::constant(g, 0.0).unwrap();
        for k in [0, last] {
            let m = phase_match(&ev.tilde[k], &zero);
            assert!(m.spread < 1e-6, "slice {k}: {m:?}");
        }
    }

    #[test]
    fn drift_identity() {
        let g = grid();
        let (sol, pairs, phi, phi_hat) = closed_form(g);
        let constants = PhysicalConstants::unit();
        let ev = assemble_tilde(&pairs, &phi, &phi_hat, constants).unwrap();
        let reference = DriftField::from_madelung(&pairs, constants).unwrap();
        let bridge = crate::schrodinger::bridge_drift(&reference, &phi, constants).unwrap();
        assert!(drift_consistency_error(&ev, &bridge, constants).unwrap() < 1e-8);
        let exact = DriftField::analytic(move |x, t| sol.bridge_drift(x, t));
        assert!(drift_consistency_error(&ev, &exact, constants).unwrap() < 1e-8);
    }

    #[test]
    fn self_bridge_keeps_modulus() {
        let g = grid();
        let (_, pairs, _, _) = closed_form(g);
        let root: Vec<RealField> = pairs.iter().map(|p| p.r.map(f64::exp).unwrap()).collect();
        let ev = assemble_tilde(&pairs, &root, &root, PhysicalConstants::unit()).unwrap();
        for (k, p) in pairs.iter().enumerate() {
            for i in 0..g.n_x() {
                assert!((ev.tilde[k].r.values()[i] - p.r.values()[i]).abs() < 1e-12);
                let expected = p.s.values()[i] + p.r.values()[i];
                assert!((ev.tilde[k].s.values()[i] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_nonpositive_phi() {
        let g = grid();
        let (_, pairs, mut phi, phi_hat) = closed_form(g);
        phi[3] = RealField::constant(g, 0.0).unwrap();
        assert!(matches!(
            assemble_tilde(&pairs, &phi, &phi_hat, PhysicalConstants::unit()),
            Err(Error::NonpositivePhi(..))
        ));
    }

    #[test]
    fn control_potential_is_linear_for_equal_widths() {
        let g = grid();
        let (sol, pairs, phi, phi_hat) = closed_form(g);
        let constants = PhysicalConstants::unit();
        let v = reference_potential(&sol, g);
        let zero = vec![RealField::constant(g, 0.0).unwrap(); g.n_t()];
        let ev = assemble_tilde(&pairs, &phi, &phi_hat, constants)
            .unwrap()
            .with_control(&pairs, v.clone(), v.clone(), constants)
            .unwrap();
        let w = sol.omega();
        for k in (0..g.n_t()).step_by(8) {
            let t = g.t(k);
            let (q, resid) = quadratic_fit(&ev.v_c[k]);
            assert!(
                resid < 1e-8 && q[0].abs() < 1e-8,
                "slice {k}: {q:?} {resid}"
            );
            // 2 omega^2 (m - mu~) x + omega^2 (mu~^2 - m^2)
            let (m, mu) = (sol.reference.mean(t), sol.bridge_mean(t));
            assert!((q[1] - 2.0 * w * w * (m - mu)).abs() < 1e-6, "slice {k}");
            assert!((q[2] - w * w * (mu * mu - m * m)).abs() < 1e-6);
        }
        // rho~ = rho and V = V_i gives zero
        let root: Vec<RealField> = pairs.iter().map(|p| p.r.map(f64::exp).unwrap()).collect();
        let rho: Vec<RealField> = root.iter().map(|r| r.map(|v| v * v).unwrap()).collect();
        let vc = control_potential(&zero, &zero, &rho, &rho, constants).unwrap();
        assert!(vc.iter().all(|f| f.values().iter().all(|v| *v == 0.0)));
        let mut bad = rho.clone();
        bad[0] = RealField::constant(g, 0.0).unwrap();
        assert!(matches!(
            control_potential(&zero, &zero, &bad, &rho, constants),
            Err(Error::NonpositiveDensity(..))
        ));
    }

    #[test]
    fn curvature_invariance() {
        let g = grid();
        let (sol, pairs, phi, phi_hat) = closed_form(g);
        let constants = PhysicalConstants::unit();
        let v = reference_potential(&sol, g);
        let zero = vec![RealField::constant(g, 0.0).unwrap(); g.n_t()];
        let ev = assemble_tilde(&pairs, &phi, &phi_hat, constants)
            .unwrap()
            .with_control(&pairs, v, zero, constants)
            .unwrap();
        assert!(curvature_invariance_error(&ev, &pairs, constants).unwrap() < 1e-12);
    }

    #[test]
    fn madelung_residuals_of_reference() {
        let g = grid();
        let (sol, pairs, _, _) = closed_form(g);
        let constants = PhysicalConstants::unit();
        let v = reference_potential(&sol, g);
        let (c, h) = madelung_residuals(&pairs, &v, constants).unwrap().max_abs();
        assert!(c < 1e-5 && h < 1e-5, "{c} {h}");
        let extracted = extract_potential(&pairs, constants).unwrap();
        for (k, f) in extracted.iter().enumerate() {
            let (q, resid) = quadratic_fit(f);
            assert!(resid < 1e-6, "slice {k}: {resid}");
            assert!((q[0] - 0.5 * sol.omega().powi(2)).abs() < 1e-6);
            for i in 1..g.n_x() - 1 {
                assert!(
                    (f.values()[i] - v[k].values()[i]).abs()
                        < 1e-6 * (1.0 + v[k].values()[i].abs())
                );
            }
        }
        assert!(madelung_residuals(&pairs[..2], &v[..2], constants).is_err());
    }

    #[test]
    fn plane_wave_madelung_residuals_vanish() {
        let g = grid();
        let p = 1.7;
        let pairs: Vec<MadelungPair> = (0..g.n_t())
            .map(|k| {
                let t = g.t(k);
                MadelungPair::new(
                    RealField::constant(g, 0.0).unwrap(),
                    RealField::from_fn(g, |x| p * x - 0.5 * p * p * t).unwrap(),
                )
                .unwrap()
            })
            .collect();
        let zero = vec![RealField::constant(g, 0.0).unwrap(); g.n_t()];
        let (c, h) = madelung_residuals(&pairs, &zero, PhysicalConstants::unit())
            .unwrap()
            .max_abs();
        assert!(c < 1e-10 && h < 1e-10, "{c} {h}");
    }

    #[test]
    fn stationary_state_has_zero_continuity_residual() {
        let g = grid();
        let e = 0.5 * PI;
        let pairs: Vec<MadelungPair> = (0..g.n_t())
            .map(|k| {
                let t = g.t(k);
                MadelungPair::new(
                    RealField::from_fn(g, |x| -0.5 * PI * x * x).unwrap(),
                    RealField::constant(g, -e * t).unwrap(),
                )
                .unwrap()
            })
            .collect();
        let constants = PhysicalConstants::unit();
        let v = extract_potential(&pairs, constants).unwrap();
        let res = madelung_residuals(&pairs, &v, constants).unwrap();
        assert!(res
            .continuity
            .iter()
            .all(|f| f.values().iter().all(|v| v.abs() < 1e-12)));
        for f in &v {
            let (q, _) = quadratic_fit(f);
            assert!((q[0] - 0.5 * PI * PI).abs() < 1e-9);
        }
    }

    #[test]
    fn schrodinger_residual_of_controlled_evolution() {
        let constants = PhysicalConstants::unit();
        let mut previous = None;
        for g in [grid(), grid().refined(2).unwrap()] {
            let (sol, pairs, phi, phi_hat) = closed_form(g);
            let v = reference_potential(&sol, g);
            let zero = vec![RealField::constant(g, 0.0).unwrap(); g.n_t()];
            let ev = assemble_tilde(&pairs, &phi, &phi_hat, constants)
                .unwrap()
                .with_control(&pairs, v, zero, constants)
                .unwrap();
            let total = ev.total_potential().unwrap();
            let rep = verify_schrodinger(
                &ev.psi_tilde,
                &total,
                constants,
                PLANE_WAVE_RESIDUAL_CONSTANT,
            )
            .unwrap();
            assert!(rep.passed(), "{rep:?}");
            if let Some(p) = previous {
                assert!(p / rep.relative_residual >= 3.0);
            }
            previous = Some(rep.relative_residual);

            // a constant shift in V_c adds a phase rate of 0.1
            let shifted: Vec<RealField> =
                total.iter().map(|f| f.map(|v| v + 0.1).unwrap()).collect();
            let bad = verify_schrodinger(
                &ev.psi_tilde,
                &shifted,
                constants,
                PLANE_WAVE_RESIDUAL_CONSTANT,
            )
            .unwrap();
            assert!((bad.relative_residual - 0.1).abs() < 0.02, "{bad:?}");
            assert!(!bad.passed());
        }
    }

    #[test]
    fn plane_wave_residual_tracks_constant() {
        let g = SpaceTimeGrid::gaussian_default();
        let p = CALIBRATION_WAVENUMBER;
        let psi: Vec<WaveField> = (0..5)
            .map(|k| {
                WaveField::from_fn(g, |x| {
                    Complex64::from_polar(1.0, p * x - 0.5 * p * p * g.t(k))
                })
                .unwrap()
            })
            .collect();
        let zero = vec![RealField::constant(g, 0.0).unwrap(); 5];
        let rep = verify_schrodinger(
            &psi,
            &zero,
            PhysicalConstants::unit(),
            PLANE_WAVE_RESIDUAL_CONSTANT,
        )
        .unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert!(rep.relative_residual > 0.1 * rep.threshold);
    }
}
