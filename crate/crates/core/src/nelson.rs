//! Euler-Maruyama ensembles of Nelson and bridge diffusions
//! `dx = b(x, t) dt + sqrt(eps) dw`, with marginal tests and a Girsanov
//! estimate of relative entropy between two drifts.
//!
//! Every path owns a ChaCha8 stream selected by its index, so an ensemble
//! depends only on the seed and the configuration, never on scheduling.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{fmt17, RealField};
use crate::schrodinger::DriftField;

/// Largest admissible fraction of clamped path-steps.
pub const MAX_CLAMP_FRACTION: f64 = 1e-4;

/// Asymptotic Kolmogorov-Smirnov critical value at alpha = 0.01.
pub const KS_COEFFICIENT: f64 = 1.63;

/// Relative band on the empirical variance.
pub const VARIANCE_BAND: f64 = 0.05;

/// Smallest variance accepted for an initial law.
pub const VARIANCE_FLOOR: f64 = 1e-10;

/// Fewest paths accepted by the statistical tests.
pub const MIN_TEST_PATHS: usize = 1000;

/// Key offset separating initial-sample streams from increment streams.
const INITIAL_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub n_paths: usize,
    pub dt_sim: f64,
    pub seed: u64,
    /// Diffusion coefficient `hbar / m`.
    pub diffusion: f64,
    pub t0: f64,
    pub t1: f64,
    /// Domain outside which the drift is evaluated at the nearest edge.
    pub domain: (f64, f64),
    /// Steps between saved slices.
    pub save_every: usize,
    /// Normals per step; the increment is their sum scaled to variance
    /// `eps dt`. A run with step `dt / k` and refinement 1 sees the same
    /// Brownian path as a run with step `dt` and refinement `k`.
    pub brownian_refinement: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            dt_sim: 1e-3,
            seed: 20_240_601,
            diffusion: 1.0,
            t0: 0.0,
            t1: 1.0,
            domain: (-6.0, 7.0),
            save_every: 100,
            brownian_refinement: 1,
        }
    }
}

impl SimulationConfig {
    pub fn n_steps(&self) -> usize {
        ((self.t1 - self.t0) / self.dt_sim).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.n_paths == 0 {
            return bad("n_paths must be positive");
        }
        if !(self.dt_sim > 0.0 && self.dt_sim.is_finite()) {
            return bad("dt_sim must be positive");
        }
        if !(self.diffusion > 0.0 && self.diffusion.is_finite()) {
            return bad("diffusion must be positive");
        }
        if !(self.t1 > self.t0) {
            return bad("t1 must exceed t0");
        }
        let steps = (self.t1 - self.t0) / self.dt_sim;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) || steps.round() < 1.0 {
            return bad("dt_sim must divide t1 - t0");
        }
        if !(self.domain.1 > self.domain.0) {
            return bad("empty simulation domain");
        }
        if self.save_every == 0 || self.n_steps() % self.save_every != 0 {
            return bad("save_every must divide the number of steps");
        }
        if self.brownian_refinement == 0 {
            return bad("brownian_refinement must be positive");
        }
        Ok(())
    }

    /// Saved times, `t0` and every `save_every` steps after it.
    pub fn saved_times(&self) -> Vec<f64> {
        let n = self.n_steps() / self.save_every;
        (0..=n)
            .map(|k| self.t0 + (k * self.save_every) as f64 * self.dt_sim)
            .collect()
    }
}

/// A one-dimensional law used for initial samples and marginal tests.
#[derive(Debug, Clone)]
pub enum Law {
    Gaussian {
        mean: f64,
        variance: f64,
    },
    /// Density on a grid, linear between nodes.
    Gridded(RealField),
}

impl Law {
    pub fn mean(&self) -> f64 {
        match self {
            Law::Gaussian { mean, .. } => *mean,
            Law::Gridded(rho) => gridded_moments(rho).0,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Law::Gaussian { variance, .. } => *variance,
            Law::Gridded(rho) => gridded_moments(rho).1,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Law::Gaussian { mean, variance } => {
                0.5 * libm::erfc(-(x - mean) / (2.0 * variance).sqrt())
            }
            Law::Gridded(rho) => GriddedCdf::new(rho).cdf(x),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Law::Gaussian { mean, variance } => {
                if !mean.is_finite() || !(*variance >= VARIANCE_FLOOR) || !variance.is_finite() {
                    return Err(Error::InvalidDensity(format!(
                        "Gaussian law N({mean}, {variance})"
                    )));
                }
            }
            Law::Gridded(rho) => {
                if !rho.is_density() || rho.values().iter().any(|v| !(*v >= 0.0)) {
                    return Err(Error::InvalidDensity(
                        "gridded law must be a nonnegative normalized density".into(),
                    ));
                }
                let dx = rho.grid().dx();
                if gridded_moments(rho).1 < dx * dx {
                    return Err(Error::InvalidDensity(
                        "gridded law is narrower than the grid spacing".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn gridded_moments(rho: &RealField) -> (f64, f64) {
    let g = rho.grid();
    let xs = g.xs();
    let v = rho.values();
    let mass = g.trapezoid(v);
    let m1 = g.trapezoid(&xs.iter().zip(v).map(|(x, p)| x * p).collect::<Vec<_>>()) / mass;
    let m2 = g.trapezoid(
        &xs.iter()
            .zip(v)
            .map(|(x, p)| (x - m1).powi(2) * p)
            .collect::<Vec<_>>(),
    ) / mass;
    (m1, m2)
}

/// Trapezoid CDF of a gridded density, exact for the piecewise-linear
/// interpolant.
struct GriddedCdf<'a> {
    rho: &'a RealField,
    cumulative: Vec<f64>,
    scale: f64,
}

impl<'a> GriddedCdf<'a> {
    fn new(rho: &'a RealField) -> Self {
        let v = rho.values();
        let dx = rho.grid().dx();
        let mut cumulative = Vec::with_capacity(v.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in v.windows(2) {
            acc += 0.5 * (w[0] + w[1]) * dx;
            cumulative.push(acc);
        }
        for c in &mut cumulative {
            *c /= acc;
        }
        Self {
            rho,
            cumulative,
            scale: acc,
        }
    }

    fn cdf(&self, x: f64) -> f64 {
        let g = self.rho.grid();
        if x <= g.x_min() {
            return 0.0;
        }
        if x >= g.x_max() {
            return 1.0;
        }
        let s = (x - g.x_min()) / g.dx();
        let i = (s.floor() as usize).min(g.n_x() - 2);
        let u = (s - i as f64) * g.dx();
        let (a, b) = (self.rho.values()[i], self.rho.values()[i + 1]);
        let slope = (b - a) / g.dx();
        self.cumulative[i] + (a * u + 0.5 * slope * u * u) / self.scale
    }

    fn inverse(&self, p: f64) -> f64 {
        let g = self.rho.grid();
        let i = match self.cumulative.binary_search_by(|c| c.total_cmp(&p)) {
            Ok(i) => i.min(g.n_x() - 2),
            Err(i) => i.saturating_sub(1).min(g.n_x() - 2),
        };
        let target = (p - self.cumulative[i]) * self.scale;
        let (a, b) = (self.rho.values()[i], self.rho.values()[i + 1]);
        let slope = (b - a) / g.dx();
        // a u + slope u^2 / 2 = target on [0, dx]
        let u = if slope.abs() < 1e-300 {
            if a > 0.0 {
                target / a
            } else {
                0.5 * g.dx()
            }
        } else {
            let disc = (a * a + 2.0 * slope * target).max(0.0);
            // stable root of the quadratic
            2.0 * target / (a + disc.sqrt())
        };
        g.x(i) + u.clamp(0.0, g.dx())
    }
}

/// `n` i.i.d. draws from `law`; draw `i` uses its own stream of `seed`.
pub fn sample_initial(law: &Law, n: usize, seed: u64) -> Result<Vec<f64>> {
    law.validate()?;
    let key = seed.wrapping_add(INITIAL_SEED_SALT);
    let cdf = match law {
        Law::Gridded(rho) => Some(GriddedCdf::new(rho)),
        Law::Gaussian { .. } => None,
    };
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(key, i);
            match (law, &cdf) {
                (Law::Gaussian { mean, variance }, _) => {
                    let z: f64 = rng.sample(StandardNormal);
                    mean + variance.sqrt() * z
                }
                (Law::Gridded(_), Some(c)) => c.inverse(rng.random::<f64>()),
                (Law::Gridded(_), None) => unreachable!("gridded law has a CDF"),
            }
        })
        .collect())
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Saved positions of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub times: Vec<f64>,
    /// `positions[k][p]` is path `p` at `times[k]`.
    pub positions: Vec<Vec<f64>>,
    pub seed: u64,
    pub drift_label: String,
    /// Path functional integrated along each path, when requested.
    pub integrals: Option<Vec<f64>>,
    pub clamped_steps: u64,
    pub total_steps: u64,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    pub fn slice_index(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|s| (s - t).abs() <= 1e-9 * (1.0 + t.abs()))
            .ok_or(Error::SliceNotSaved(t))
    }

    pub fn slice(&self, t: f64) -> Result<&[f64]> {
        Ok(&self.positions[self.slice_index(t)?])
    }

    /// Writes `t,mean,var,ks_stat,n` per saved slice; `ks_stat` is against
    /// `target(t)` when given and `nan` otherwise.
    pub fn write_summary<W: Write>(
        &self,
        mut w: W,
        target: Option<&dyn Fn(f64) -> Law>,
    ) -> std::io::Result<()> {
        writeln!(w, "t,mean,var,ks_stat,n")?;
        for (t, xs) in self.times.iter().zip(&self.positions) {
            let (m, v) = moments(xs);
            let ks = target.map_or(f64::NAN, |f| ks_statistic(xs, &f(*t)));
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt17(*t),
                fmt17(m),
                fmt17(v),
                fmt17(ks),
                xs.len()
            )?;
        }
        Ok(())
    }
}

impl PathEnsemble {
    /// Writes `path,t,x` for every path at every saved slice.
    pub fn write_paths<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "path,t,x")?;
        for p in 0..self.n_paths() {
            for (t, xs) in self.times.iter().zip(&self.positions) {
                writeln!(w, "{p},{},{}", fmt17(*t), fmt17(xs[p]))?;
            }
        }
        Ok(())
    }
}

/// Sample mean and unbiased variance, summed in index order.
pub fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var)
}

pub fn simulate(
    drift: &DriftField,
    initial: &[f64],
    config: &SimulationConfig,
) -> Result<PathEnsemble> {
    simulate_inner(drift, initial, config, None)
}

/// As [`simulate`], also integrating `f(x, t)` along every path with the
/// trapezoid rule on the simulation steps.
pub fn simulate_with_integrand(
    drift: &DriftField,
    initial: &[f64],
    config: &SimulationConfig,
    f: &(dyn Fn(f64, f64) -> f64 + Sync),
) -> Result<PathEnsemble> {
    simulate_inner(drift, initial, config, Some(f))
}

struct PathOutcome {
    saved: Vec<f64>,
    integral: f64,
    clamped: u64,
}

fn simulate_inner(
    drift: &DriftField,
    initial: &[f64],
    config: &SimulationConfig,
    integrand: Option<&(dyn Fn(f64, f64) -> f64 + Sync)>,
) -> Result<PathEnsemble> {
    config.validate()?;
    if initial.len() != config.n_paths {
        return Err(Error::LengthMismatch {
            expected: config.n_paths,
            got: initial.len(),
        });
    }
    let n_steps = config.n_steps();
    let dt = config.dt_sim;
    let (lo, hi) = config.domain;
    let width = hi - lo;
    let k = config.brownian_refinement;
    let noise = (config.diffusion * dt / k as f64).sqrt();
    let n_saved = n_steps / config.save_every + 1;

    let outcomes: Vec<PathOutcome> = initial
        .par_iter()
        .enumerate()
        .map(|(p, &x0)| {
            let mut rng = path_rng(config.seed, p);
            let mut x = x0;
            let mut saved = Vec::with_capacity(n_saved);
            saved.push(x);
            let mut clamped = 0u64;
            let mut integral = 0.0;
            let mut t = config.t0;
            let mut f_prev = integrand.map_or(0.0, |f| f(x, t));
            for step in 1..=n_steps {
                let xc = x.clamp(lo, hi);
                if xc != x {
                    clamped += 1;
                }
                let b = drift.eval(xc, t);
                if !((b * dt).abs() <= width) {
                    return Err(Error::DriftBlowup {
                        value: (b * dt).abs(),
                        width,
                    });
                }
                let mut dw = 0.0;
                for _ in 0..k {
                    let z: f64 = rng.sample(StandardNormal);
                    dw += z;
                }
                x += b * dt + noise * dw;
                t = config.t0 + step as f64 * dt;
                if let Some(f) = integrand {
                    let f_next = f(x, t);
                    integral += 0.5 * dt * (f_prev + f_next);
                    f_prev = f_next;
                }
                if step % config.save_every == 0 {
                    saved.push(x);
                }
            }
            Ok(PathOutcome {
                saved,
                integral,
                clamped,
            })
        })
        .collect::<Result<_>>()?;

    let clamped_steps: u64 = outcomes.iter().map(|o| o.clamped).sum();
    let total_steps = (n_steps * config.n_paths) as u64;
    if clamped_steps as f64 > MAX_CLAMP_FRACTION * total_steps as f64 {
        return Err(Error::ExcessiveClamping {
            clamped: clamped_steps,
            total: total_steps,
        });
    }
    let positions = (0..n_saved)
        .map(|s| outcomes.iter().map(|o| o.saved[s]).collect())
        .collect();
    let integrals = integrand.map(|_| outcomes.iter().map(|o| o.integral).collect());
    Ok(PathEnsemble {
        times: config.saved_times(),
        positions,
        seed: config.seed,
        drift_label: label(drift),
        integrals,
        clamped_steps,
        total_steps,
    })
}

fn label(drift: &DriftField) -> String {
    match drift {
        DriftField::Analytic(_) => "analytic".into(),
        DriftField::Gridded { grid, .. } => format!("gridded {}x{}", grid.n_x(), grid.n_t()),
    }
}

/// Kolmogorov-Smirnov distance between the samples and `law`.
pub fn ks_statistic(xs: &[f64], law: &Law) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let gridded = match law {
        Law::Gridded(rho) => Some(GriddedCdf::new(rho)),
        Law::Gaussian { .. } => None,
    };
    let cdf = |x: f64| gridded.as_ref().map_or_else(|| law.cdf(x), |c| c.cdf(x));
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Outcome of [`marginal_test`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalReport {
    pub t: f64,
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub target_mean: f64,
    pub target_variance: f64,
    pub ks: f64,
    pub ks_critical: f64,
}

impl MarginalReport {
    /// `|mean - target| <= 3 sigma / sqrt(n)`.
    pub fn mean_ok(&self) -> bool {
        (self.mean - self.target_mean).abs() <= 3.0 * (self.target_variance / self.n as f64).sqrt()
    }

    pub fn variance_ok(&self) -> bool {
        (self.variance / self.target_variance - 1.0).abs() <= VARIANCE_BAND
    }

    pub fn ks_ok(&self) -> bool {
        self.ks < self.ks_critical
    }

    pub fn passed(&self) -> bool {
        self.mean_ok() && self.variance_ok() && self.ks_ok()
    }
}

/// Moments and KS distance of the slice at `t` against `target`.
pub fn marginal_test(ensemble: &PathEnsemble, t: f64, target: &Law) -> Result<MarginalReport> {
    let xs = ensemble.slice(t)?;
    if xs.len() < MIN_TEST_PATHS {
        return Err(Error::InvalidParameter(format!(
            "{} paths, need at least {MIN_TEST_PATHS}",
            xs.len()
        )));
    }
    target.validate()?;
    let (mean, variance) = moments(xs);
    Ok(MarginalReport {
        t,
        n: xs.len(),
        mean,
        variance,
        target_mean: target.mean(),
        target_variance: target.variance(),
        ks: ks_statistic(xs, target),
        ks_critical: KS_COEFFICIENT / (xs.len() as f64).sqrt(),
    })
}

/// Girsanov relative entropy `H(q0, p0) + E_Q int |b_Q - b_P|^2 / (2 eps) dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyEstimate {
    /// Marginal term plus path term.
    pub estimate: f64,
    pub path_term: f64,
    pub marginal_term: f64,
    /// Sample standard deviation of the path integrals over `sqrt(n)`.
    pub standard_error: f64,
    pub n_paths: usize,
}

/// Simulates under `q_drift` from `initial` and averages the Girsanov
/// action against `p_drift`. `marginal_term` is `H(q0, p0)`.
pub fn entropy_estimate(
    q_drift: &DriftField,
    p_drift: &DriftField,
    initial: &[f64],
    config: &SimulationConfig,
    marginal_term: f64,
) -> Result<EntropyEstimate> {
    let f = girsanov_integrand(q_drift, p_drift, config.diffusion);
    let ens = simulate_with_integrand(q_drift, initial, config, &f)?;
    Ok(EntropyEstimate::from_integrals(
        ens.integrals.as_deref().unwrap_or_default(),
        marginal_term,
    ))
}

impl EntropyEstimate {
    /// Estimate from per-path Girsanov actions already integrated along an
    /// ensemble simulated under Q.
    pub fn from_integrals(integrals: &[f64], marginal_term: f64) -> Self {
        let (mean, var) = moments(integrals);
        let n = integrals.len();
        Self {
            estimate: marginal_term + mean,
            path_term: mean,
            marginal_term,
            standard_error: (var / n as f64).sqrt(),
            n_paths: n,
        }
    }
}

/// Girsanov integrand `|b_Q - b_P|^2 / (2 eps)`.
pub fn girsanov_integrand<'a>(
    q_drift: &'a DriftField,
    p_drift: &'a DriftField,
    diffusion: f64,
) -> impl Fn(f64, f64) -> f64 + Sync + 'a {
    let inv = 0.5 / diffusion;
    move |x, t| {
        let d = q_drift.eval(x, t) - p_drift.eval(x, t);
        inv * d * d
    }
}

/// `KL(N(m_q, v_q) || N(m_p, v_p))`.
pub fn gaussian_relative_entropy(m_q: f64, v_q: f64, m_p: f64, v_p: f64) -> f64 {
    0.5 * ((v_q / v_p) + (m_q - m_p).powi(2) / v_p - 1.0 + (v_p / v_q).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{GaussianBridgeSolution, GaussianConfig};
    use crate::grid::SpaceTimeGrid;
    use std::f64::consts::PI;

    fn small(n_paths: usize) -> SimulationConfig {
        SimulationConfig {
            n_paths,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn gaussian_initial_samples() {
        let law = Law::Gaussian {
            mean: 0.0,
            variance: 0.5 / PI,
        };
        let n = 20_000;
        let xs = sample_initial(&law, n, 11).unwrap();
        let (m, v) = moments(&xs);
        assert!(m.abs() < 4.0 * (0.5 / PI / n as f64).sqrt());
        assert!((v * 2.0 * PI - 1.0).abs() < 0.05);
        let again = sample_initial(&law, 10, 11).unwrap();
        assert_eq!(&xs[..10], &again[..]);
        assert_ne!(sample_initial(&law, 10, 12).unwrap(), again);
    }

    #[test]
    fn gridded_initial_samples() {
        let g = SpaceTimeGrid::new(-6.0, 7.0, 1024, 0.0, 1.0, 2).unwrap();
        let rho = RealField::normalized_density(
            g,
            g.xs()
                .iter()
                .map(|x| (-PI * (x - 0.5) * (x - 0.5)).exp())
                .collect(),
        )
        .unwrap();
        let law = Law::Gridded(rho);
        assert!((law.mean() - 0.5).abs() < 1e-10);
        assert!((law.variance() * 2.0 * PI - 1.0).abs() < 1e-6);
        let xs = sample_initial(&law, 20_000, 3).unwrap();
        let (m, v) = moments(&xs);
        assert!((m - 0.5).abs() < 4.0 * (0.5 / PI / 20_000.0f64).sqrt());
        assert!((v * 2.0 * PI - 1.0).abs() < 0.05);
        let exact = Law::Gaussian {
            mean: 0.5,
            variance: 0.5 / PI,
        };
        assert!(ks_statistic(&xs, &exact) < KS_COEFFICIENT / (20_000.0f64).sqrt());
        for x in [-1.0, 0.0, 0.5, 1.3] {
            assert!((law.cdf(x) - exact.cdf(x)).abs() < 1e-4);
        }
    }

    #[test]
    fn degenerate_laws_rejected() {
        assert!(matches!(
            sample_initial(
                &Law::Gaussian {
                    mean: 0.0,
                    variance: 0.0
                },
                10,
                1
            ),
            Err(Error::InvalidDensity(_))
        ));
        let g = SpaceTimeGrid::new(-1.0, 1.0, 101, 0.0, 1.0, 2).unwrap();
        let spike = RealField::normalized_density(
            g,
            g.xs()
                .iter()
                .map(|x| (-1e6 * x * x).exp() + 1e-300)
                .collect(),
        )
        .unwrap();
        assert!(matches!(
            sample_initial(&Law::Gridded(spike), 10, 1),
            Err(Error::InvalidDensity(_))
        ));
        let unnormalized = RealField::constant(g, 3.0).unwrap();
        assert!(sample_initial(&Law::Gridded(unnormalized), 10, 1).is_err());
    }

    #[test]
    fn brownian_increments() {
        let cfg = SimulationConfig {
            domain: (-50.0, 50.0),
            ..small(20_000)
        };
        let ens = simulate(&DriftField::zero(), &vec![0.0; cfg.n_paths], &cfg).unwrap();
        let (m, v) = moments(ens.slice(1.0).unwrap());
        let se_v = v * (2.0 / cfg.n_paths as f64).sqrt();
        assert!((v - 1.0).abs() < 3.0 * se_v, "{v}");
        assert!(m.abs() < 3.0 / (cfg.n_paths as f64).sqrt());
        assert_eq!(ens.times.len(), 11);
        assert_eq!(ens.clamped_steps, 0);
    }

    #[test]
    fn ornstein_uhlenbeck_stationary_variance() {
        let w = 2.0;
        let cfg = SimulationConfig {
            diffusion: 0.5,
            ..small(20_000)
        };
        let stat = cfg.diffusion / (2.0 * w);
        let x0 = sample_initial(
            &Law::Gaussian {
                mean: 0.0,
                variance: stat,
            },
            cfg.n_paths,
            5,
        )
        .unwrap();
        let ens = simulate(&DriftField::analytic(move |x, _| -w * x), &x0, &cfg).unwrap();
        let (_, v) = moments(ens.slice(1.0).unwrap());
        let se_v = stat * (2.0 / cfg.n_paths as f64).sqrt();
        assert!(
            (v - stat).abs() < 3.0 * se_v + stat * w * cfg.dt_sim,
            "{v} vs {stat}"
        );
    }

    #[test]
    fn ensembles_are_reproducible() {
        let cfg = small(2_000);
        let x0 = sample_initial(
            &Law::Gaussian {
                mean: 0.0,
                variance: 0.2,
            },
            cfg.n_paths,
            cfg.seed,
        )
        .unwrap();
        let drift = DriftField::analytic(|x, t| -x + t);
        let a = simulate(&drift, &x0, &cfg).unwrap();
        let b = simulate(&drift, &x0, &cfg).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let c = pool.install(|| simulate(&drift, &x0, &cfg).unwrap());
        assert_eq!(a, c);
        let mut out_a = Vec::new();
        let mut out_c = Vec::new();
        a.write_summary(&mut out_a, None).unwrap();
        c.write_summary(&mut out_c, None).unwrap();
        assert_eq!(out_a, out_c);
    }

    #[test]
    fn drift_blowup_and_clamping() {
        let cfg = small(1_000);
        let x0 = vec![0.0; cfg.n_paths];
        assert!(matches!(
            simulate(&DriftField::analytic(|_, _| 1e6), &x0, &cfg),
            Err(Error::DriftBlowup { .. })
        ));
        let cfg = SimulationConfig {
            domain: (-0.1, 0.1),
            ..small(1_000)
        };
        assert!(matches!(
            simulate(&DriftField::zero(), &x0, &cfg),
            Err(Error::ExcessiveClamping { .. })
        ));
        let bad = SimulationConfig {
            dt_sim: 0.3,
            ..small(1_000)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn marginal_test_of_bridge_and_reference() {
        let sol = GaussianBridgeSolution::new(GaussianConfig::default()).unwrap();
        let w = sol.omega();
        let cfg = small(20_000);
        let rho0 = Law::Gaussian {
            mean: 0.0,
            variance: 0.5 / w,
        };
        let rho1 = Law::Gaussian {
            mean: 1.0,
            variance: 0.5 / w,
        };
        let x0 = sample_initial(&rho0, cfg.n_paths, cfg.seed).unwrap();
        let s = sol.clone();
        let bridge = simulate(
            &DriftField::analytic(move |x, t| s.bridge_drift(x, t)),
            &x0,
            &cfg,
        )
        .unwrap();
        assert!(marginal_test(&bridge, 0.0, &rho0).unwrap().passed());
        let end = marginal_test(&bridge, 1.0, &rho1).unwrap();
        assert!(end.passed(), "{end:?}");
        for t in [0.3, 0.5, 0.8] {
            let law = Law::Gaussian {
                mean: sol.bridge_mean(t),
                variance: 0.5 / w,
            };
            assert!(marginal_test(&bridge, t, &law).unwrap().passed(), "t {t}");
        }
        assert!(matches!(
            marginal_test(&bridge, 0.55, &rho1),
            Err(Error::SliceNotSaved(_))
        ));

        let r = sol.reference;
        let x0 = sample_initial(
            &Law::Gaussian {
                mean: r.mean(0.0),
                variance: 0.5 / w,
            },
            cfg.n_paths,
            cfg.seed,
        )
        .unwrap();
        let reference =
            simulate(&DriftField::analytic(move |x, t| r.drift(x, t)), &x0, &cfg).unwrap();
        let rep = marginal_test(&reference, 1.0, &rho1).unwrap();
        assert!(!rep.passed());
        assert!((rep.mean - r.mean(1.0)).abs() < 0.02);
    }

    #[test]
    fn only_the_bridge_drift_hits_the_target() {
        let sol = GaussianBridgeSolution::new(GaussianConfig::default()).unwrap();
        let w = sol.omega();
        let cfg = small(20_000);
        let rho0 = Law::Gaussian {
            mean: 0.0,
            variance: 0.5 / w,
        };
        let rho1 = Law::Gaussian {
            mean: 1.0,
            variance: 0.5 / w,
        };
        let x0 = sample_initial(&rho0, cfg.n_paths, cfg.seed).unwrap();
        for delta in [-0.2, 0.0, 0.2] {
            let s = sol.clone();
            let drift = DriftField::analytic(move |x, t| {
                s.reference.drift(x, t) + s.coefficients.beta(t) + delta
            });
            let ens = simulate(&drift, &x0, &cfg).unwrap();
            assert!(marginal_test(&ens, 0.0, &rho0).unwrap().passed());
            let passed = marginal_test(&ens, 1.0, &rho1).unwrap().passed();
            assert_eq!(passed, delta == 0.0, "delta {delta}");
        }
    }

    #[test]
    fn halving_the_step_changes_the_mean_less_than_the_error() {
        let sol = GaussianBridgeSolution::new(GaussianConfig::default()).unwrap();
        let w = sol.omega();
        let coarse = SimulationConfig {
            brownian_refinement: 2,
            ..small(20_000)
        };
        let fine = SimulationConfig {
            dt_sim: 5e-4,
            save_every: 200,
            ..small(20_000)
        };
        let x0 = sample_initial(
            &Law::Gaussian {
                mean: 0.0,
                variance: 0.5 / w,
            },
            coarse.n_paths,
            1,
        )
        .unwrap();
        let s = sol.clone();
        let drift = DriftField::analytic(move |x, t| s.bridge_drift(x, t));
        let a = simulate(&drift, &x0, &coarse).unwrap();
        let b = simulate(&drift, &x0, &fine).unwrap();
        let (ma, va) = moments(a.slice(1.0).unwrap());
        let (mb, _) = moments(b.slice(1.0).unwrap());
        assert!(
            (ma - mb).abs() < (va / coarse.n_paths as f64).sqrt(),
            "{ma} {mb}"
        );
    }

    #[test]
    fn entropy_of_equal_drifts_vanishes() {
        let cfg = small(2_000);
        let x0 = vec![0.0; cfg.n_paths];
        let d = DriftField::analytic(|x, _| -x);
        let e = entropy_estimate(&d, &d, &x0, &cfg, 0.0).unwrap();
        assert_eq!(e.estimate, 0.0);
        assert_eq!(e.standard_error, 0.0);
    }

    #[test]
    fn entropy_is_quadratic_in_the_drift_gap() {
        let cfg = SimulationConfig {
            diffusion: 0.5,
            ..small(2_000)
        };
        let x0 = sample_initial(
            &Law::Gaussian {
                mean: 0.0,
                variance: 0.5,
            },
            cfg.n_paths,
            2,
        )
        .unwrap();
        let p = DriftField::analytic(|x, _| -x);
        let q1 = DriftField::analytic(|x, t| -x + 0.3 * x.sin() + t);
        let q2 = DriftField::analytic(|x, t| -x + 2.0 * (0.3 * x.sin() + t));
        // simulate both under the same law so that only the gap differs
        let e1 = entropy_estimate(&q1, &p, &x0, &cfg, 0.0).unwrap();
        let gap = |x: f64, t: f64| {
            let d = 2.0 * (0.3 * x.sin() + t);
            d * d / (2.0 * cfg.diffusion)
        };
        let ens = simulate_with_integrand(&q1, &x0, &cfg, &gap).unwrap();
        let (e2, _) = moments(ens.integrals.as_ref().unwrap());
        assert!((e2 / e1.path_term - 4.0).abs() < 1e-12);
        assert!(e1.estimate >= -2.0 * e1.standard_error);
        assert!(entropy_estimate(&q2, &p, &x0, &cfg, 0.0).unwrap().estimate > e1.estimate);
    }

    #[test]
    fn bridge_entropy_closed_form() {
        let sol = GaussianBridgeSolution::new(GaussianConfig::default()).unwrap();
        let w = sol.omega();
        let cfg = small(1_000);
        let x0 = sample_initial(
            &Law::Gaussian {
                mean: 0.0,
                variance: 0.5 / w,
            },
            cfg.n_paths,
            9,
        )
        .unwrap();
        let s = sol.clone();
        let q = DriftField::analytic(move |x, t| s.bridge_drift(x, t));
        let r = sol.reference;
        let p = DriftField::analytic(move |x, t| r.drift(x, t));
        let marginal = gaussian_relative_entropy(0.0, 0.5 / w, r.mean(0.0), 0.5 / w);
        assert!((marginal - w * r.m1 * r.m1).abs() < 1e-12);
        let e = entropy_estimate(&q, &p, &x0, &cfg, marginal).unwrap();
        let b0 = sol.coefficients.beta0;
        let exact = b0 * b0 * ((2.0 * w).exp() - 1.0) / (4.0 * w);
        assert!((exact - 1.6859659974517085).abs() < 1e-12);
        assert!((e.path_term - exact).abs() < 1e-4, "{}", e.path_term);
        assert!(e.standard_error < 1e-10);
        assert!((e.estimate - e.path_term - 1.5462876524184404).abs() < 1e-12);
    }
}
