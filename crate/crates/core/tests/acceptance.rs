//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use bridgesteer::config::RunConfig;
use bridgesteer::field::{RealField, WaveField};
use bridgesteer::gaussian::{
    solve_constants, verify_ode_systems, GaussianBridgeSolution, GaussianConfig,
};
use bridgesteer::nelson::{
    girsanov_integrand, marginal_test, sample_initial, simulate, simulate_with_integrand,
    EntropyEstimate, Law, SimulationConfig,
};
use bridgesteer::pipeline::run_gaussian_example;
use bridgesteer::schrodinger::{solve_bridge, BridgeSolution, DriftField, FortetConfig};
use bridgesteer::steering::{
    assemble_tilde, boundary_modulus_error, curvature_invariance_error, phase_match,
    plane_wave_constant, verify_schrodinger, CALIBRATION_WAVENUMBER, PLANE_WAVE_RESIDUAL_CONSTANT,
};
use bridgesteer::{PhysicalConstants, SpaceTimeGrid};

/// Closed-form constants at omega = pi, evaluated at 40 digits.
const M1: f64 = -0.701_568_704_154_279_268_2;
const M2: f64 = 2.403_137_408_308_558_536_4;
const BETA0: f64 = -0.199_094_321_348_963_730_9;
const GAMMA0: f64 = 0.773_143_826_209_220_191_3;
const D1: f64 = -4.089_103_405_760_267_061_6;
/// `beta0^2 (e^{2 pi} - 1) / (4 pi)` at 40 digits.
const PATH_ENTROPY: f64 = 1.685_965_997_451_708_525_2;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn solution() -> GaussianBridgeSolution {
    GaussianBridgeSolution::new(GaussianConfig::default()).expect("default width is valid")
}

fn constants_reproduction() -> Outcome {
    let k = solve_constants(PI).map_err(|e| e.to_string())?;
    let residual = k.residuals().max_abs();
    let agreement = [
        (k.m1, M1),
        (k.m2, M2),
        (k.beta0, BETA0),
        (k.gamma0, GAMMA0),
        (k.d1, D1),
    ]
    .iter()
    .map(|(a, b)| rel(*a, *b))
    .fold(0.0f64, f64::max);
    check(
        residual < 1e-9 && agreement < 1e-12 && k.d0 == 0.0,
        format!("max residual {residual:.2e} (< 1e-9), max relative deviation {agreement:.2e} (< 1e-12)"),
    )
}

fn ode_suite() -> Outcome {
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for w in [0.5, 1.0, PI, 5.0] {
        let sol = GaussianBridgeSolution::new(GaussianConfig::new(w).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let ode = verify_ode_systems(&sol, 201).map_err(|e| e.to_string())?;
        let max = |c: [f64; 3]| c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        worst.0 = worst.0.max(ode.max());
        worst.1 = worst.1.max(max(sol.coefficients.initial_constraints()));
        worst.2 = worst.2.max(max(sol.coefficients.final_constraints()));
    }
    check(
        worst.0 < 1e-6 && worst.1 <= 1e-12 && worst.2 <= 1e-9,
        format!(
            "ODE residual {:.2e} (< 1e-6), t0 constraints {:.2e} (<= 1e-12), t1 constraints {:.2e} (<= 1e-9)",
            worst.0, worst.1, worst.2
        ),
    )
}

fn boundary_products() -> Outcome {
    let sol = solution();
    let mut worst = 0.0f64;
    for i in 0..=8000 {
        let x = -4.0 + i as f64 * 1e-3;
        worst = worst.max((sol.bridge_density(x, 0.0) - (-PI * x * x).exp()).abs());
        worst = worst.max((sol.bridge_density(x, 1.0) - (-PI * (x - 1.0).powi(2)).exp()).abs());
    }
    check(
        worst <= 1e-10,
        format!("max |phi phi_hat - target| on |x| <= 4: {worst:.2e} (<= 1e-10)"),
    )
}

fn fortet_on(grid: SpaceTimeGrid) -> Result<(BridgeSolution, f64, f64), String> {
    let sol = solution();
    let (rho0, rho1) = sol.boundary_densities(grid).map_err(|e| e.to_string())?;
    let b = solve_bridge(
        &rho0,
        &rho1,
        &sol.reference.process(),
        PhysicalConstants::unit(),
        &FortetConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let err = sol
        .factor_error(&b.phi, &b.phi_hat, 4.0)
        .map_err(|e| e.to_string())?
        .max();
    let last = grid.n_t() - 1;
    let l1 = [(0, &rho0), (last, &rho1)]
        .iter()
        .map(|(k, rho)| {
            let p = b.product(*k).expect("factors share a grid");
            grid.integrate(
                &p.values()
                    .iter()
                    .zip(rho.values())
                    .map(|(a, b)| (a - b).abs())
                    .collect::<Vec<_>>(),
            )
        })
        .fold(0.0f64, f64::max);
    Ok((b, err, l1))
}

fn numeric_vs_closed_form() -> Outcome {
    let grid = SpaceTimeGrid::gaussian_default();
    let (b, coarse, l1) = fortet_on(grid)?;
    let (_, fine, _) = fortet_on(grid.refined(2).map_err(|e| e.to_string())?)?;
    let ratio = coarse / fine;
    check(
        b.iterations <= 50 && b.final_marginal_error <= 1e-8 && l1 <= 1e-8 && coarse <= 1e-4 && ratio >= 3.0,
        format!(
            "{} iterations (<= 50), marginal L1 {:.2e} (<= 1e-8), factor error {coarse:.2e} (<= 1e-4), refined {fine:.2e}, ratio {ratio:.2} (>= 3)",
            b.iterations,
            l1.max(b.final_marginal_error)
        ),
    )
}

struct Assembled {
    ev: bridgesteer::steering::ControlledEvolution,
    pairs: Vec<bridgesteer::MadelungPair>,
}

fn assemble(
    sol: &GaussianBridgeSolution,
    grid: SpaceTimeGrid,
    phi: &[RealField],
    phi_hat: &[RealField],
) -> Result<Assembled, String> {
    let unit = PhysicalConstants::unit();
    let pairs = sol.reference_pairs(grid).map_err(|e| e.to_string())?;
    let v = sol.reference_potentials(grid).map_err(|e| e.to_string())?;
    let v_i = vec![RealField::constant(grid, 0.0).map_err(|e| e.to_string())?; grid.n_t()];
    let ev = assemble_tilde(&pairs, phi, phi_hat, unit)
        .and_then(|ev| ev.with_control(&pairs, v, v_i, unit))
        .map_err(|e| e.to_string())?;
    Ok(Assembled { ev, pairs })
}

fn theorem_check(
    sol: &GaussianBridgeSolution,
    a: &Assembled,
    constant: f64,
) -> Result<(f64, f64, f64, f64, bool), String> {
    let grid = *a.ev.grid();
    let last = grid.n_t() - 1;
    let total = a.ev.total_potential().map_err(|e| e.to_string())?;
    let rep = verify_schrodinger(&a.ev.psi_tilde, &total, PhysicalConstants::unit(), constant)
        .map_err(|e| e.to_string())?;
    let psi0 = WaveField::from_fn(grid, |x| sol.psi_initial(x)).map_err(|e| e.to_string())?;
    let psi1 = WaveField::from_fn(grid, |x| sol.psi_final(x)).map_err(|e| e.to_string())?;
    let modulus = boundary_modulus_error(&a.ev.psi_tilde[0], &psi0)
        .max(boundary_modulus_error(&a.ev.psi_tilde[last], &psi1));
    let zero = RealField::constant(grid, 0.0).map_err(|e| e.to_string())?;
    let spread = phase_match(&a.ev.tilde[0], &zero)
        .spread
        .max(phase_match(&a.ev.tilde[last], &zero).spread);
    Ok((
        rep.relative_residual,
        rep.threshold,
        modulus,
        spread,
        rep.passed(),
    ))
}

fn theorem_verification() -> Outcome {
    let grid = SpaceTimeGrid::gaussian_default();
    let sol = solution();
    let constant = plane_wave_constant(&grid, CALIBRATION_WAVENUMBER).map_err(|e| e.to_string())?;
    let calibrated = (constant - PLANE_WAVE_RESIDUAL_CONSTANT).abs() < 1e-3;
    let (phi, phi_hat) = sol.factors(grid).map_err(|e| e.to_string())?;
    let closed = theorem_check(&sol, &assemble(&sol, grid, &phi, &phi_hat)?, constant)?;
    let (b, _, _) = fortet_on(grid)?;
    let numeric = theorem_check(&sol, &assemble(&sol, grid, &b.phi, &b.phi_hat)?, constant)?;
    let ok = |r: &(f64, f64, f64, f64, bool)| r.4 && r.2 <= 1e-6 && r.3 <= 1e-6;
    check(
        calibrated && ok(&closed) && ok(&numeric),
        format!(
            "C = {constant:.4}; closed-form factors: residual {:.2e} (<= {:.2e}), |psi~| endpoint {:.2e}, phase spread {:.2e}; \
             Fortet factors: residual {:.2e}, |psi~| endpoint {:.2e}, phase spread {:.2e} (<= 1e-6)",
            closed.0, closed.1, closed.2, closed.3, numeric.0, numeric.2, numeric.3
        ),
    )
}

fn potential_invariance() -> Outcome {
    let grid = SpaceTimeGrid::gaussian_default();
    let sol = solution();
    let (phi, phi_hat) = sol.factors(grid).map_err(|e| e.to_string())?;
    let a = assemble(&sol, grid, &phi, &phi_hat)?;
    let closed = curvature_invariance_error(&a.ev, &a.pairs, PhysicalConstants::unit())
        .map_err(|e| e.to_string())?;
    let (b, _, _) = fortet_on(grid)?;
    let a = assemble(&sol, grid, &b.phi, &b.phi_hat)?;
    let numeric = curvature_invariance_error(&a.ev, &a.pairs, PhysicalConstants::unit())
        .map_err(|e| e.to_string())?;
    check(
        closed <= 1e-10 && numeric <= 1e-10,
        format!("max violation: closed-form factors {closed:.2e}, Fortet factors {numeric:.2e} (<= 1e-10)"),
    )
}

fn monte_carlo_steering() -> Outcome {
    let sol = solution();
    let var = sol.bridge_variance();
    let cfg = SimulationConfig::default();
    let start = Instant::now();
    let x0 = sample_initial(
        &Law::Gaussian {
            mean: 0.0,
            variance: var,
        },
        cfg.n_paths,
        cfg.seed,
    )
    .map_err(|e| e.to_string())?;
    let s = sol;
    let bridge = simulate(
        &DriftField::analytic(move |x, t| s.bridge_drift(x, t)),
        &x0,
        &cfg,
    )
    .map_err(|e| e.to_string())?;
    let seconds = start.elapsed().as_secs_f64();
    let rho1 = Law::Gaussian {
        mean: 1.0,
        variance: var,
    };
    let q = marginal_test(&bridge, 1.0, &rho1).map_err(|e| e.to_string())?;
    let r = sol.reference;
    let y0 = sample_initial(
        &Law::Gaussian {
            mean: r.mean(0.0),
            variance: var,
        },
        cfg.n_paths,
        cfg.seed,
    )
    .map_err(|e| e.to_string())?;
    let reference = simulate(&DriftField::analytic(move |x, t| r.drift(x, t)), &y0, &cfg)
        .map_err(|e| e.to_string())?;
    let p = marginal_test(&reference, 1.0, &rho1).map_err(|e| e.to_string())?;
    check(
        q.mean_ok() && q.variance_ok() && q.ks_ok() && !p.passed() && seconds <= 60.0,
        format!(
            "bridge t=1 mean {:.4} (1 +- {:.4}), variance ratio {:.4} (within 5%), KS {:.2e} (< {:.2e}); reference KS {:.2e}, mean {:.3} (rejected: {}); {seconds:.1} s",
            q.mean,
            3.0 * (var / q.n as f64).sqrt(),
            q.variance / q.target_variance,
            q.ks,
            q.ks_critical,
            p.ks,
            p.mean,
            !p.passed()
        ),
    )
}

fn entropy_closed_form() -> Outcome {
    let sol = solution();
    let exact = sol.path_entropy();
    let cfg = SimulationConfig::default();
    let var = sol.bridge_variance();
    let x0 = sample_initial(
        &Law::Gaussian {
            mean: 0.0,
            variance: var,
        },
        cfg.n_paths,
        cfg.seed,
    )
    .map_err(|e| e.to_string())?;
    let s = sol;
    let q = DriftField::analytic(move |x, t| s.bridge_drift(x, t));
    let r = sol.reference;
    let p = DriftField::analytic(move |x, t| r.drift(x, t));
    let f = girsanov_integrand(&q, &p, cfg.diffusion);
    let ens = simulate_with_integrand(&q, &x0, &cfg, &f).map_err(|e| e.to_string())?;
    let e = EntropyEstimate::from_integrals(
        ens.integrals.as_deref().unwrap_or_default(),
        sol.marginal_entropy(),
    );
    let quadrature = sol.path_entropy_quadrature_bound(cfg.dt_sim);
    let gap = (e.path_term - exact).abs();
    check(
        rel(exact, PATH_ENTROPY) < 1e-12 && gap <= 2.0 * e.standard_error + quadrature,
        format!(
            "path term {:.10} vs closed form {exact:.10}: gap {gap:.2e} <= 2 SE ({:.2e}) + time quadrature bound ({quadrature:.2e}); \
             with the initial term {:.6} the total H = {:.6}",
            e.path_term,
            2.0 * e.standard_error,
            e.marginal_term,
            e.estimate
        ),
    )
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map(|it| {
            it.filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .map(|p| {
                    (
                        p.file_name().unwrap().to_string_lossy().into_owned(),
                        std::fs::read(&p).unwrap_or_default(),
                    )
                })
                .collect()
        })
        .unwrap_or_default();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let dirs = [
        tempfile::tempdir().map_err(|e| e.to_string())?,
        tempfile::tempdir().map_err(|e| e.to_string())?,
    ];
    for d in &dirs {
        let config = RunConfig {
            out: d.path().to_path_buf(),
            ..RunConfig::default()
        };
        let report = run_gaussian_example(&config, true).map_err(|e| e.to_string())?;
        if !report.passed() {
            return Err(format!(
                "gaussian example failed gate {:?}",
                report.first_failure()
            ));
        }
    }
    let (a, b) = (csv_files(dirs[0].path()), csv_files(dirs[1].path()));
    let bytes: usize = a.iter().map(|f| f.1.len()).sum();
    check(
        a.len() >= 6 && a == b,
        format!(
            "{} CSV files ({bytes} bytes) identical across two runs with seed {}",
            a.len(),
            RunConfig::default().seed
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 constants reproduction", constants_reproduction),
        ("2 ODE and constraint suite", ode_suite),
        ("3 boundary products", boundary_products),
        ("4 numeric vs closed form", numeric_vs_closed_form),
        ("5 controlled Schrödinger evolution", theorem_verification),
        ("6 potential invariance", potential_invariance),
        ("7 Monte Carlo steering", monte_carlo_steering),
        ("8 entropy closed form", entropy_closed_form),
        ("9 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{name}] {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{name}] {detail} [{secs:.1} s]");
            }
        }
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
