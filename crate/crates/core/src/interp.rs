//! Monotone cubic (Fritsch-Carlson) resampling of tabulated densities.

use std::path::Path;

use crate::error::{Error, Result};
use crate::field::RealField;
use crate::grid::SpaceTimeGrid;

/// Piecewise cubic Hermite interpolant that preserves monotonicity of the
/// data between nodes, so positive data stays positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    /// Nodes must be finite with strictly increasing abscissae.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::LengthMismatch {
                expected: xs.len(),
                got: ys.len(),
            });
        }
        if xs.len() < 2 {
            return Err(Error::GridTooSmall {
                needed: 2,
                got: xs.len(),
            });
        }
        if let Some(i) = xs.iter().chain(&ys).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i % xs.len()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(
                "abscissae must be strictly increasing".into(),
            ));
        }
        let n = xs.len();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let d: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
        let mut m = vec![0.0; n];
        if n == 2 {
            m = vec![d[0]; 2];
        } else {
            for i in 1..n - 1 {
                if d[i - 1] * d[i] > 0.0 {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
                }
            }
            m[0] = end_slope(h[0], h[1], d[0], d[1]);
            m[n - 1] = end_slope(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
        }
        Ok(Self { xs, ys, slopes: m })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    /// Value at `x`; outside the nodes the end values are held.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = self.xs.partition_point(|&v| v <= x) - 1;
        let h = self.xs[i + 1] - self.xs[i];
        let s = (x - self.xs[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.ys[i]
            + (s3 - 2.0 * s2 + s) * h * self.slopes[i]
            + (-2.0 * s3 + 3.0 * s2) * self.ys[i + 1]
            + (s3 - s2) * h * self.slopes[i + 1]
    }
}

/// One-sided three-point end slope, limited to keep monotonicity.
fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}

/// Reads a two-column `x,value` CSV; a non-numeric first line is a header.
pub fn read_table(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut cells = line.split(',').map(str::trim);
        let (Some(a), Some(b), None) = (cells.next(), cells.next(), cells.next()) else {
            return Err(Error::Config(format!(
                "{}:{}: expected two columns",
                path.display(),
                n + 1
            )));
        };
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(x), Ok(y)) => {
                xs.push(x);
                ys.push(y);
            }
            _ if n == 0 => continue,
            _ => {
                return Err(Error::Config(format!(
                    "{}:{}: not a number",
                    path.display(),
                    n + 1
                )))
            }
        }
    }
    Ok((xs, ys))
}

/// Resamples a tabulated density onto `grid` and renormalizes it. The table
/// must cover the grid and be positive wherever it is sampled.
pub fn resample_density(xs: Vec<f64>, ys: Vec<f64>, grid: SpaceTimeGrid) -> Result<RealField> {
    let p = Pchip::new(xs, ys)?;
    let (lo, hi) = p.domain();
    let tol = 1e-9 * grid.width();
    if lo > grid.x_min() + tol || hi < grid.x_max() - tol {
        return Err(Error::InvalidDensity(format!(
            "table covers [{lo}, {hi}] but the grid spans [{}, {}]",
            grid.x_min(),
            grid.x_max()
        )));
    }
    let values: Vec<f64> = grid.xs().iter().map(|&x| p.eval(x)).collect();
    if let Some(i) = values.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::NonpositiveDensity(values[i], i));
    }
    RealField::normalized_density(grid, values)
}

pub fn load_density(path: &Path, grid: SpaceTimeGrid) -> Result<RealField> {
    let (xs, ys) = read_table(path)?;
    resample_density(xs, ys, grid)
}
