//! Savitzky–Golay smoothing, finite-difference derivatives, Pearson
//! correlation, 2-D Gaussian KDE and mean-square displacement.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::trajkit::TrajectorySet;

/// Savitzky–Golay window settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgConfig {
    pub window: usize,
    pub order: usize,
}

impl SgConfig {
    pub fn new(window: usize, order: usize) -> Result<Self> {
        let cfg = SgConfig { window, order };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 {
            return Err(Error::Config(format!(
                "Savitzky-Golay window must be odd, got {}",
                self.window
            )));
        }
        if self.order >= self.window {
            return Err(Error::Config(format!(
                "Savitzky-Golay order {} must be below window {}",
                self.order, self.window
            )));
        }
        Ok(())
    }

    /// Window 1, order 0: the filter is the identity.
    pub fn identity() -> Self {
        SgConfig { window: 1, order: 0 }
    }
}

/// A uniformly sampled scalar series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub values: Vec<f64>,
    pub dt: f64,
}

impl Series {
    /// Series with `dt = 1` (one frame).
    pub fn new(values: Vec<f64>) -> Self {
        Series { values, dt: 1.0 }
    }

    pub fn with_dt(values: Vec<f64>, dt: f64) -> Self {
        Series { values, dt }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Least-squares projection ("hat") matrix of the polynomial basis over one
/// window. Row `i` holds the weights that evaluate the fitted polynomial at
/// window position `i`.
fn sg_projection(cfg: &SgConfig) -> DMatrix<f64> {
    let w = cfg.window;
    let half = (w / 2) as f64;
    let scale = if half > 0.0 { half } else { 1.0 };
    let vander = DMatrix::from_fn(w, cfg.order + 1, |i, j| {
        ((i as f64 - half) / scale).powi(j as i32)
    });
    let q = vander.qr().q();
    &q * q.transpose()
}

/// Savitzky–Golay smoothing. Interior points take the centre value of the
/// local fit; the first and last `window / 2` points are evaluated on the
/// fit over the first and last full window.
pub fn sg_filter(s: &Series, cfg: &SgConfig) -> Result<Series> {
    cfg.validate()?;
    let n = s.len();
    if cfg.window > n {
        return Err(Error::Config(format!(
            "Savitzky-Golay window {} exceeds series length {n}",
            cfg.window
        )));
    }
    let w = cfg.window;
    let half = w / 2;
    let hat = sg_projection(cfg);
    let x = &s.values;
    let apply = |row: usize, start: usize| -> f64 {
        (0..w).map(|j| hat[(row, j)] * x[start + j]).sum()
    };

    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate().take(half) {
        *o = apply(i, 0);
    }
    for (i, o) in out.iter_mut().enumerate().take(n - half).skip(half) {
        *o = apply(half, i - half);
    }
    for (i, o) in out.iter_mut().enumerate().skip(n - half) {
        *o = apply(i - (n - w), n - w);
    }
    Ok(Series::with_dt(out, s.dt))
}

/// Central differences inside, second-order one-sided stencils at both ends.
pub fn estimate_derivative(s: &Series) -> Result<Series> {
    let n = s.len();
    if n < 3 {
        return Err(Error::Config(format!(
            "derivative estimation needs at least 3 samples, got {n}"
        )));
    }
    let z = &s.values;
    let h2 = 2.0 * s.dt;
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * z[0] + 4.0 * z[1] - z[2]) / h2;
    for i in 1..n - 1 {
        d[i] = (z[i + 1] - z[i - 1]) / h2;
    }
    d[n - 1] = (3.0 * z[n - 1] - 4.0 * z[n - 2] + z[n - 3]) / h2;
    Ok(Series::with_dt(d, s.dt))
}

/// Pearson correlation coefficient of two equal-length sequences.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "pearson",
            format!("lengths {} and {}", a.len(), b.len()),
        ));
    }
    if a.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two samples".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Square evaluation lattice for [`kde_density`]. Node `(i, j)` sits at
/// `(x_min + j dx, y_min + i dy)`; row index runs along y.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub size: usize,
}

impl Grid {
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.size - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.size - 1) as f64
    }

    pub fn node(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.x_min + col as f64 * self.dx(),
            self.y_min + row as f64 * self.dy(),
        ]
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    /// Scott's rule, `n^(-1/6)` times the mean of the per-axis standard deviations.
    Auto,
    Fixed(f64),
}

/// Resolves [`Bandwidth::Auto`]. Degenerate spreads (all points identical)
/// fall back to the larger grid spacing.
pub fn resolve_bandwidth(positions: &[[f64; 2]], bandwidth: Bandwidth, grid: &Grid) -> Result<f64> {
    match bandwidth {
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => Ok(h),
        Bandwidth::Fixed(h) => Err(Error::Input(format!("bandwidth must be positive, got {h}"))),
        Bandwidth::Auto => {
            let n = positions.len() as f64;
            let std_axis = |k: usize| {
                let mean = positions.iter().map(|p| p[k]).sum::<f64>() / n;
                let var = positions.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>()
                    / (n - 1.0).max(1.0);
                var.sqrt()
            };
            let h = n.powf(-1.0 / 6.0) * 0.5 * (std_axis(0) + std_axis(1));
            if h > 0.0 && h.is_finite() {
                Ok(h)
            } else {
                Ok(grid.dx().max(grid.dy()))
            }
        }
    }
}

/// Isotropic Gaussian KDE evaluated on every lattice node.
pub fn kde_density(positions: &[[f64; 2]], grid: &Grid, bandwidth: Bandwidth) -> Result<Matrix> {
    if positions.is_empty() {
        return Err(Error::Input("kernel density needs at least one position".into()));
    }
    if grid.size < 2 || !(grid.x_max > grid.x_min) || !(grid.y_max > grid.y_min) {
        return Err(Error::Input(format!("degenerate density grid {grid:?}")));
    }
    let h = resolve_bandwidth(positions, bandwidth, grid)?;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * h * h * positions.len() as f64);
    let inv = 1.0 / (2.0 * h * h);
    let mut out = Matrix::zeros(grid.size, grid.size);
    for r in 0..grid.size {
        for c in 0..grid.size {
            let [x, y] = grid.node(r, c);
            let d: f64 = positions
                .iter()
                .map(|p| (-((p[0] - x).powi(2) + (p[1] - y).powi(2)) * inv).exp())
                .sum();
            out.set(r, c, norm * d);
        }
    }
    Ok(out)
}

/// `MSD(t) = (1/k) sum_i |p_i(t) - p_i(0)|^2`.
pub fn mean_square_displacement(t: &TrajectorySet) -> Series {
    let k = t.n_particles();
    let f = &t.features;
    let first = f.row(0).to_vec();
    let values = (0..f.rows())
        .map(|r| {
            let row = f.row(r);
            row.iter()
                .zip(&first)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / k as f64
        })
        .collect();
    Series::new(values)
}
