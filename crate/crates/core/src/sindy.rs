//! Sparse identification of scalar latent dynamics `dz/dt = f(z)` with a
//! monomial candidate library and sequentially thresholded least squares.

use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::signal::{estimate_derivative, sg_filter, Series, SgConfig};

/// Monomials `[1, z, z^2, ..., z^degree]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateLibrary {
    pub degree: usize,
}

impl CandidateLibrary {
    pub fn n_terms(&self) -> usize {
        self.degree + 1
    }

    pub fn term_names(&self) -> Vec<String> {
        (0..=self.degree)
            .map(|j| match j {
                0 => "1".to_string(),
                1 => "z".to_string(),
                _ => format!("z^{j}"),
            })
            .collect()
    }
}

/// Row `t` is `[1, z_t, z_t^2, ..., z_t^n]`.
pub fn build_library(z: &[f64], degree: usize) -> Result<Matrix> {
    if degree < 1 {
        return Err(Error::Config("library degree must be at least 1".into()));
    }
    let mut theta = Matrix::zeros(z.len(), degree + 1);
    for (t, &zt) in z.iter().enumerate() {
        let row = theta.row_mut(t);
        row[0] = 1.0;
        for j in 1..=degree {
            row[j] = row[j - 1] * zt;
        }
    }
    Ok(theta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StlsqFit {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    /// Root-mean-square residual of the final fit.
    pub residual: f64,
    pub rank_deficient: bool,
    pub converged: bool,
}

impl StlsqFit {
    pub fn is_empty_model(&self) -> bool {
        self.coefficients.iter().all(|&c| c == 0.0)
    }
}

/// Minimum-norm least squares on the selected columns. Returns the solution
/// and whether the active block was rank deficient.
fn lstsq(theta: &DMatrix<f64>, rhs: &DVector<f64>, active: &[usize]) -> (Vec<f64>, bool) {
    let sub = theta.select_columns(active);
    let dim = sub.nrows().max(sub.ncols());
    let svd = sub.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * dim as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let sol = svd
        .solve(rhs, tol)
        .map(|v| v.iter().copied().collect())
        .unwrap_or_else(|_| vec![0.0; active.len()]);
    (sol, rank < active.len())
}

/// Sequentially thresholded least squares: fit the active columns, drop
/// coefficients below `threshold`, refit until the support stops changing.
pub fn stlsq(theta: &Matrix, dzdt: &[f64], threshold: f64, max_iter: usize) -> Result<StlsqFit> {
    let (rows, cols) = theta.shape();
    if dzdt.len() != rows {
        return Err(Error::shape(
            "stlsq",
            format!("{rows} library rows but {} derivative samples", dzdt.len()),
        ));
    }
    if rows <= cols {
        return Err(Error::Input(format!(
            "need more samples ({rows}) than library terms ({cols})"
        )));
    }
    if !(threshold >= 0.0) {
        return Err(Error::Config(format!("threshold must be >= 0, got {threshold}")));
    }
    let a = DMatrix::from_row_slice(rows, cols, theta.as_slice());
    let b = DVector::from_column_slice(dzdt);

    let mut active: Vec<usize> = (0..cols).collect();
    let mut coefficients = vec![0.0; cols];
    let mut rank_deficient = false;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter.max(1) {
        iterations += 1;
        let (sol, deficient) = lstsq(&a, &b, &active);
        rank_deficient = deficient;
        coefficients = vec![0.0; cols];
        for (&c, v) in active.iter().zip(&sol) {
            coefficients[c] = *v;
        }
        let next: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&c| coefficients[c].abs() >= threshold)
            .collect();
        if next == active {
            converged = true;
            break;
        }
        active = next;
        if active.is_empty() {
            coefficients = vec![0.0; cols];
            converged = true;
            break;
        }
    }
    if !converged {
        for c in &mut coefficients {
            if c.abs() < threshold {
                *c = 0.0;
            }
        }
    }
    if rank_deficient {
        warn!("stlsq: rank-deficient active set, minimum-norm solution used");
    }

    let pred = theta.matmul(&Matrix::column(&coefficients))?;
    let residual = (pred
        .as_slice()
        .iter()
        .zip(dzdt)
        .map(|(p, d)| (p - d).powi(2))
        .sum::<f64>()
        / rows as f64)
        .sqrt();
    let fit = StlsqFit {
        coefficients,
        iterations,
        residual,
        rank_deficient,
        converged,
    };
    if fit.is_empty_model() {
        warn!("stlsq: every coefficient was thresholded away; model is dz/dt = 0");
    }
    Ok(fit)
}

/// Where a model came from. Stored verbatim in the model JSON.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Provenance {
    pub source: String,
    pub sg_window: usize,
    pub sg_order: usize,
    pub dt: f64,
    pub samples: usize,
    pub iterations: usize,
    pub residual: f64,
    pub rank_deficient: bool,
    pub empty_model: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// `dz/dt = sum_j coefficients[j] z^j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SindyModel {
    pub degree: usize,
    pub threshold: f64,
    pub coefficients: Vec<f64>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl SindyModel {
    pub fn new(coefficients: Vec<f64>, threshold: f64) -> Result<Self> {
        if coefficients.len() < 2 {
            return Err(Error::Config("model needs at least the terms 1 and z".into()));
        }
        Ok(SindyModel {
            degree: coefficients.len() - 1,
            threshold,
            coefficients,
            provenance: Provenance::default(),
        })
    }

    pub fn library(&self) -> CandidateLibrary {
        CandidateLibrary { degree: self.degree }
    }

    /// Right-hand side `f(z)` by Horner's rule.
    pub fn rhs(&self, z: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * z + c)
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.iter().all(|&c| c == 0.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: SindyModel = serde_json::from_str(s)?;
        if m.coefficients.len() != m.degree + 1 {
            return Err(Error::shape(
                "SindyModel",
                format!("degree {} with {} coefficients", m.degree, m.coefficients.len()),
            ));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Smooth, differentiate, build the library and run STLSQ.
pub fn discover(z: &Series, sg: &SgConfig, degree: usize, threshold: f64) -> Result<SindyModel> {
    discover_with(z, sg, degree, threshold, 20)
}

pub fn discover_with(
    z: &Series,
    sg: &SgConfig,
    degree: usize,
    threshold: f64,
    max_iter: usize,
) -> Result<SindyModel> {
    if z.len() <= sg.window {
        return Err(Error::Input(format!(
            "latent length {} must exceed the filter window {}",
            z.len(),
            sg.window
        )));
    }
    let smooth = sg_filter(z, sg)?;
    let dzdt = estimate_derivative(&smooth)?;
    let theta = build_library(&smooth.values, degree)?;
    let fit = stlsq(&theta, &dzdt.values, threshold, max_iter)?;
    Ok(SindyModel {
        degree,
        threshold,
        provenance: Provenance {
            source: "latent".into(),
            sg_window: sg.window,
            sg_order: sg.order,
            dt: z.dt,
            samples: z.len(),
            iterations: fit.iterations,
            residual: fit.residual,
            rank_deficient: fit.rank_deficient,
            empty_model: fit.is_empty_model(),
            seed: None,
            config_hash: None,
        },
        coefficients: fit.coefficients,
    })
}

/// Fixed-step classical Runge–Kutta trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeSolution {
    pub z: Vec<f64>,
    pub dt: f64,
    pub z0: f64,
    /// Set when |z| crossed the divergence bound; `z` then holds the finite prefix.
    pub diverged: bool,
}

pub const DIVERGENCE_BOUND: f64 = 1e6;

/// RK4 for `n_steps` steps; the result holds `n_steps + 1` samples unless
/// the solution diverges first.
pub fn integrate(model: &SindyModel, z0: f64, dt: f64, n_steps: usize) -> Result<OdeSolution> {
    integrate_fn(|z| model.rhs(z), z0, dt, n_steps)
}

pub fn integrate_fn(f: impl Fn(f64) -> f64, z0: f64, dt: f64, n_steps: usize) -> Result<OdeSolution> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    if !z0.is_finite() || !f(z0).is_finite() {
        return Err(Error::Input(format!("right-hand side is not finite at z0 = {z0}")));
    }
    let mut z = Vec::with_capacity(n_steps + 1);
    z.push(z0);
    let mut cur = z0;
    let mut diverged = false;
    for _ in 0..n_steps {
        let k1 = f(cur);
        let k2 = f(cur + 0.5 * dt * k1);
        let k3 = f(cur + 0.5 * dt * k2);
        let k4 = f(cur + dt * k3);
        let next = cur + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !next.is_finite() || next.abs() > DIVERGENCE_BOUND {
            diverged = true;
            break;
        }
        z.push(next);
        cur = next;
    }
    Ok(OdeSolution { z, dt, z0, diverged })
}

/// `dz/dt = c0 + c1 z + c2 z^2 ...`, ascending degree, zero terms omitted,
/// three decimals.
pub fn model_to_text(model: &SindyModel) -> String {
    let mut out = String::from("dz/dt =");
    let mut first = true;
    for (j, &c) in model.coefficients.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let mag = format!("{:.3}", c.abs());
        let term = match j {
            0 => mag,
            1 => format!("{mag} z"),
            _ => format!("{mag} z^{j}"),
        };
        if first {
            out += if c < 0.0 { " -" } else { " " };
            out += &term;
            first = false;
        } else {
            out += if c < 0.0 { " - " } else { " + " };
            out += &term;
        }
    }
    if first {
        out += " 0";
    }
    out
}
