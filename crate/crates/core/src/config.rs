//! Flat `key = value` run configuration with `#` comments. Every key has a
//! default matching the unit-shift Gaussian example.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gaussian::{solve_constants, GaussianConfig};
use crate::grid::SpaceTimeGrid;
use crate::nelson::SimulationConfig;
use crate::schrodinger::{FortetConfig, PdeScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    GaussianExample,
    SolveBridge,
    Simulate,
    VerifyAll,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-example" => Ok(Self::GaussianExample),
            "solve-bridge" => Ok(Self::SolveBridge),
            "simulate" => Ok(Self::Simulate),
            "verify-all" => Ok(Self::VerifyAll),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected gaussian-example, solve-bridge, simulate or verify-all)"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::GaussianExample => "gaussian-example",
            Self::SolveBridge => "solve-bridge",
            Self::Simulate => "simulate",
            Self::VerifyAll => "verify-all",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub omega: f64,
    /// Domain bounds; `None` selects the covering domain of the reference.
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    pub n_x: usize,
    pub n_t: usize,
    pub substeps: usize,
    pub max_iterations: usize,
    pub marginal_tolerance: f64,
    pub n_paths: usize,
    pub dt_sim: f64,
    /// Simulation steps between saved ensemble slices.
    pub save_every: usize,
    pub seed: u64,
    /// Grid slices between exported `vc_*` and `psi_tilde_*` files.
    pub export_every: usize,
    /// Write every path at every saved slice to `paths.csv`.
    pub dump_paths: bool,
    pub out: PathBuf,
    pub rho0_file: Option<PathBuf>,
    pub rho1_file: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let grid = SpaceTimeGrid::gaussian_default();
        let fortet = FortetConfig::default();
        let sim = SimulationConfig::default();
        Self {
            mode: Mode::GaussianExample,
            omega: GaussianConfig::default().omega(),
            x_min: None,
            x_max: None,
            n_x: grid.n_x(),
            n_t: grid.n_t(),
            substeps: fortet.scheme.substeps,
            max_iterations: fortet.max_iterations,
            marginal_tolerance: fortet.marginal_tolerance,
            n_paths: sim.n_paths,
            dt_sim: sim.dt_sim,
            save_every: sim.save_every,
            seed: sim.seed,
            export_every: 64,
            dump_paths: false,
            out: PathBuf::from("out"),
            rho0_file: None,
            rho1_file: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_bound(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl RunConfig {
    /// Parses `key = value` lines over the defaults. Unknown keys and
    /// repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key '{key}'",
                    n + 1
                )));
            }
            c.set(key, value)?;
        }
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => self.mode = value.parse()?,
            "omega" => self.omega = parse(key, value)?,
            "x_min" => self.x_min = parse_bound(key, value)?,
            "x_max" => self.x_max = parse_bound(key, value)?,
            "n_x" => self.n_x = parse(key, value)?,
            "n_t" => self.n_t = parse(key, value)?,
            "substeps" => self.substeps = parse(key, value)?,
            "max_iterations" => self.max_iterations = parse(key, value)?,
            "marginal_tolerance" => self.marginal_tolerance = parse(key, value)?,
            "n_paths" => self.n_paths = parse(key, value)?,
            "dt_sim" => self.dt_sim = parse(key, value)?,
            "save_every" => self.save_every = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "export_every" => self.export_every = parse(key, value)?,
            "dump_paths" => self.dump_paths = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "rho0_file" => self.rho0_file = Some(PathBuf::from(value)),
            "rho1_file" => self.rho1_file = Some(PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Checks every parameter against its module's preconditions.
    pub fn validate(&self) -> Result<()> {
        self.gaussian()?;
        let grid = self.grid()?;
        self.fortet().validate()?;
        self.simulation(grid).validate()?;
        if self.export_every == 0 {
            return Err(Error::Config("export_every must be positive".into()));
        }
        if self.mode == Mode::SolveBridge && (self.rho0_file.is_none() || self.rho1_file.is_none())
        {
            return Err(Error::Config(
                "solve-bridge needs rho0_file and rho1_file".into(),
            ));
        }
        Ok(())
    }

    pub fn gaussian(&self) -> Result<GaussianConfig> {
        GaussianConfig::new(self.omega)
    }

    pub fn grid(&self) -> Result<SpaceTimeGrid> {
        let g = self.gaussian()?;
        let (lo, hi) = solve_constants(g.omega())?.reference().covering_domain();
        SpaceTimeGrid::new(
            self.x_min.unwrap_or(lo),
            self.x_max.unwrap_or(hi),
            self.n_x,
            g.t0(),
            g.t1(),
            self.n_t,
        )
    }

    pub fn fortet(&self) -> FortetConfig {
        FortetConfig {
            max_iterations: self.max_iterations,
            marginal_tolerance: self.marginal_tolerance,
            scheme: PdeScheme {
                substeps: self.substeps,
            },
            record_timings: false,
        }
    }

    pub fn simulation(&self, grid: SpaceTimeGrid) -> SimulationConfig {
        SimulationConfig {
            n_paths: self.n_paths,
            dt_sim: self.dt_sim,
            seed: self.seed,
            diffusion: 1.0,
            t0: grid.t0(),
            t1: grid.t1(),
            domain: (grid.x_min(), grid.x_max()),
            save_every: self.save_every,
            brownian_refinement: 1,
        }
    }
}
