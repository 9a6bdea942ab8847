//! Gaussian-process regression with an RBF kernel and one lengthscale per
//! input dimension. Targets are standardized internally.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, stream};

pub const GP_FORMAT: &str = "mprio-gp";
pub const GP_VERSION: u32 = 1;

/// Added to the kernel diagonal before factorizing.
pub const JITTER: f64 = 1e-8;

/// Kernel hyperparameters, in standardized target units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl GpHyper {
    fn to_log(&self) -> DVector<f64> {
        let d = self.lengthscales.len();
        DVector::from_fn(d + 2, |i, _| match i {
            0 => self.signal_variance.ln(),
            i if i <= d => self.lengthscales[i - 1].ln(),
            _ => self.noise_variance.ln(),
        })
    }

    fn from_log(t: &DVector<f64>) -> Self {
        let d = t.len() - 2;
        GpHyper {
            signal_variance: t[0].exp(),
            lengthscales: (1..=d).map(|i| t[i].exp()).collect(),
            noise_variance: t[d + 1].exp(),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.lengthscales.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: self.lengthscales.len(),
                context: "gp lengthscales",
            });
        }
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.signal_variance) || !ok(self.noise_variance) || !self.lengthscales.iter().all(|&l| ok(l)) {
            return Err(Error::Fit("hyperparameters must be positive and finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Lower bound on the (standardized) noise variance.
    pub noise_floor: f64,
    /// Lengthscale bounds as multiples of each input's range.
    pub lengthscale_bounds: (f64, f64),
    pub signal_bounds: (f64, f64),
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 8,
            seed: 0,
            max_iter: 100,
            noise_floor: 1e-6,
            lengthscale_bounds: (0.01, 5.0),
            signal_bounds: (1e-2, 1e2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    pub initial: f64,
    pub final_value: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub log_marginal_likelihood: f64,
    pub restarts: Vec<RestartTrace>,
}

/// Fitted model. Immutable; predictions only read the cached factor.
#[derive(Debug, Clone)]
pub struct GpModel {
    x: DMatrix<f64>,
    y: DVector<f64>,
    y_mean: f64,
    y_scale: f64,
    hyper: GpHyper,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    diagnostics: Option<FitDiagnostics>,
}

#[derive(Serialize, Deserialize)]
struct GpFile {
    format: String,
    version: u32,
    hyper: GpHyper,
    y_mean: f64,
    y_scale: f64,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    #[serde(default)]
    diagnostics: Option<FitDiagnostics>,
}

fn scaled_sq_dist(x: &DMatrix<f64>, i: usize, z: &[f64], ell: &[f64]) -> f64 {
    ell.iter()
        .enumerate()
        .map(|(k, l)| {
            let u = (x[(i, k)] - z[k]) / l;
            u * u
        })
        .sum()
}

/// Noise-free kernel matrix.
fn kernel_matrix(x: &DMatrix<f64>, h: &GpHyper) -> DMatrix<f64> {
    let n = x.nrows();
    let mut k = DMatrix::zeros(n, n);
    let mut row = vec![0.0; x.ncols()];
    for i in 0..n {
        for (c, r) in row.iter_mut().enumerate() {
            *r = x[(i, c)];
        }
        k[(i, i)] = h.signal_variance;
        for j in 0..i {
            let v = h.signal_variance * (-0.5 * scaled_sq_dist(x, j, &row, &h.lengthscales)).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn factorize(x: &DMatrix<f64>, h: &GpHyper) -> Option<(DMatrix<f64>, Cholesky<f64, Dyn>)> {
    let kf = kernel_matrix(x, h);
    let mut k = kf.clone();
    for i in 0..k.nrows() {
        k[(i, i)] += h.noise_variance + JITTER;
    }
    Cholesky::new(k).map(|c| (kf, c))
}

/// Log marginal likelihood and, optionally, its gradient in log parameters.
fn log_marginal(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    theta: &DVector<f64>,
    with_grad: bool,
) -> Option<(f64, Option<DVector<f64>>)> {
    let h = GpHyper::from_log(theta);
    let (kf, chol) = factorize(x, &h)?;
    let alpha = chol.solve(y);
    let n = y.len();
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    let value = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * std::f64::consts::TAU.ln();
    if !value.is_finite() {
        return None;
    }
    if !with_grad {
        return Some((value, None));
    }
    // W = αα^T − K^{-1}; ∂L/∂θ = ½ tr(W ∂K/∂θ)
    let mut w = alpha.clone() * alpha.transpose();
    w -= chol.inverse();
    let d = x.ncols();
    let mut g = DVector::zeros(d + 2);
    for i in 0..n {
        for j in 0..n {
            let wk = w[(i, j)] * kf[(i, j)];
            g[0] += wk;
            if i != j {
                for k in 0..d {
                    let u = (x[(i, k)] - x[(j, k)]) / h.lengthscales[k];
                    g[1 + k] += wk * u * u;
                }
            }
        }
        g[d + 1] += w[(i, i)] * h.noise_variance;
    }
    g *= 0.5;
    Some((value, Some(g)))
}

fn project(t: &mut DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) {
    for i in 0..t.len() {
        t[i] = t[i].clamp(lo[i], hi[i]);
    }
}

/// Projected quasi-Newton ascent with backtracking; never accepts a decrease.
/// Variables sitting on a bound with the gradient pointing outward are held fixed.
fn ascend(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    start: DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    max_iter: usize,
) -> (DVector<f64>, f64, f64, usize) {
    let m = start.len();
    let mut theta = start;
    project(&mut theta, lo, hi);
    let Some((mut value, Some(mut grad))) = log_marginal(x, y, &theta, true) else {
        return (theta, f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
    };
    let initial = value;
    let mut h_inv = DMatrix::<f64>::identity(m, m) / grad.amax().max(1.0);
    let mut iterations = 0;
    while iterations < max_iter {
        let free: Vec<bool> = (0..m)
            .map(|i| !((theta[i] <= lo[i] && grad[i] < 0.0) || (theta[i] >= hi[i] && grad[i] > 0.0)))
            .collect();
        let g_free = DVector::from_fn(m, |i, _| if free[i] { grad[i] } else { 0.0 });
        if g_free.amax() < 1e-6 {
            break;
        }
        iterations += 1;
        let mut dir = &h_inv * &g_free;
        for i in 0..m {
            if !free[i] {
                dir[i] = 0.0;
            }
        }
        if dir.dot(&g_free) <= 0.0 {
            h_inv = DMatrix::identity(m, m) / grad.amax().max(1.0);
            dir = &h_inv * &g_free;
        }
        let mut step = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let mut cand = &theta + &dir * step;
            project(&mut cand, lo, hi);
            let moved = &cand - &theta;
            if moved.amax() < 1e-12 {
                break;
            }
            if let Some((v, _)) = log_marginal(x, y, &cand, false) {
                if v > value + 1e-4 * grad.dot(&moved) {
                    next = Some((cand, v));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((cand, v)) = next else { break };
        let Some((_, Some(g_new))) = log_marginal(x, y, &cand, true) else {
            break;
        };
        let s_k = &cand - &theta;
        // Curvature pair for the negated (minimized) objective.
        let y_k = &grad - &g_new;
        let sy = s_k.dot(&y_k);
        if sy > 1e-12 * s_k.norm() * y_k.norm() {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(m, m);
            let a = &eye - &s_k * y_k.transpose() * rho;
            h_inv = &a * &h_inv * a.transpose() + &s_k * s_k.transpose() * rho;
        }
        let gain = v - value;
        theta = cand;
        value = v;
        grad = g_new;
        if gain <= 1e-10 * value.abs().max(1.0) {
            break;
        }
    }
    (theta, initial, value, iterations)
}

impl GpModel {
    /// Fit to `rows` (each a d-vector) and targets `y`.
    pub fn fit(rows: &[Vec<f64>], y: &[f64], opts: &FitOptions) -> Result<Self> {
        let (x, y_raw) = training_data(rows, y)?;
        if opts.restarts == 0 || opts.max_iter == 0 {
            return Err(Error::Argument("restarts and max_iter must be positive".into()));
        }
        if !(opts.noise_floor > 0.0) || opts.noise_floor > 1.0 {
            return Err(Error::Argument("noise_floor must lie in (0, 1]".into()));
        }
        let (n, d) = x.shape();
        let y_mean = y_raw.mean();
        let var = y_raw.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_scale = if var.sqrt() > 1e-12 * y_mean.abs().max(1.0) {
            var.sqrt()
        } else {
            1.0
        };
        let ys = y_raw.map(|v| (v - y_mean) / y_scale);

        let mut lo = DVector::zeros(d + 2);
        let mut hi = DVector::zeros(d + 2);
        lo[0] = opts.signal_bounds.0.ln();
        hi[0] = opts.signal_bounds.1.ln();
        for k in 0..d {
            let col = x.column(k);
            let range = col.max() - col.min();
            let range = if range > 0.0 { range } else { 1.0 };
            lo[1 + k] = (opts.lengthscale_bounds.0 * range).ln();
            hi[1 + k] = (opts.lengthscale_bounds.1 * range).ln();
        }
        lo[d + 1] = opts.noise_floor.ln();
        hi[d + 1] = 0.0;

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, stream::GP_RESTARTS));
        let mut starts = Vec::with_capacity(opts.restarts);
        // First start: unit signal, lengthscale a third of the range, modest noise.
        starts.push(DVector::from_fn(d + 2, |i, _| match i {
            0 => 0.0,
            i if i <= d => lo[i] - opts.lengthscale_bounds.0.ln() - 3.0f64.ln(),
            _ => 0.1f64.ln(),
        }));
        for _ in 1..opts.restarts {
            starts.push(DVector::from_fn(d + 2, |i, _| rng.random_range(lo[i]..=hi[i])));
        }
        let runs: Vec<_> = starts
            .into_par_iter()
            .map(|s| ascend(&x, &ys, s, &lo, &hi, opts.max_iter))
            .collect();
        let best = runs
            .iter()
            .enumerate()
            .filter(|(_, r)| r.2.is_finite())
            .max_by(|a, b| a.1 .2.total_cmp(&b.1 .2).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .ok_or_else(|| Error::Fit("kernel matrix not positive definite at any restart".into()))?;
        let diagnostics = FitDiagnostics {
            log_marginal_likelihood: runs[best].2,
            restarts: runs
                .iter()
                .map(|r| RestartTrace {
                    initial: r.1,
                    final_value: r.2,
                    iterations: r.3,
                })
                .collect(),
        };
        let hyper = GpHyper::from_log(&runs[best].0);
        let mut m = Self::with_hyper(rows, y, y_mean, y_scale, hyper)?;
        m.diagnostics = Some(diagnostics);
        Ok(m)
    }

    /// Build a model with fixed hyperparameters (standardized units).
    pub fn with_hyper(rows: &[Vec<f64>], y: &[f64], y_mean: f64, y_scale: f64, hyper: GpHyper) -> Result<Self> {
        let (x, y_raw) = training_data(rows, y)?;
        hyper.validate(x.ncols())?;
        if !(y_scale > 0.0) || !y_mean.is_finite() {
            return Err(Error::Fit("bad target standardization".into()));
        }
        let ys = y_raw.map(|v| (v - y_mean) / y_scale);
        let (_, chol) =
            factorize(&x, &hyper).ok_or_else(|| Error::Fit("kernel matrix not positive definite".into()))?;
        let alpha = chol.solve(&ys);
        Ok(GpModel {
            x,
            y: y_raw,
            y_mean,
            y_scale,
            hyper,
            chol,
            alpha,
            diagnostics: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    /// Training inputs, one row per sample.
    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.x.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn targets(&self) -> &[f64] {
        self.y.as_slice()
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn diagnostics(&self) -> Option<&FitDiagnostics> {
        self.diagnostics.as_ref()
    }

    /// Target mean and scale used for standardization.
    pub fn standardization(&self) -> (f64, f64) {
        (self.y_mean, self.y_scale)
    }

    /// Log marginal likelihood of the standardized targets at the current hyperparameters.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let ys = self.y.map(|v| (v - self.y_mean) / self.y_scale);
        log_marginal(&self.x, &ys, &self.hyper.to_log(), false).map_or(f64::NEG_INFINITY, |r| r.0)
    }

    /// Posterior mean and standard deviation of a noisy observation at `x`.
    ///
    /// Panics if `x` has the wrong length.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        assert_eq!(x.len(), self.dim(), "prediction input has the wrong dimension");
        let h = &self.hyper;
        let ks = DVector::from_fn(self.len(), |i, _| {
            h.signal_variance * (-0.5 * scaled_sq_dist(&self.x, i, x, &h.lengthscales)).exp()
        });
        let mean = ks.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&ks)
            .expect("factor has a positive diagonal");
        let var = (h.signal_variance + h.noise_variance - v.norm_squared()).max(0.0);
        (self.y_mean + self.y_scale * mean, self.y_scale * var.sqrt())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = GpFile {
            format: GP_FORMAT.into(),
            version: GP_VERSION,
            hyper: self.hyper.clone(),
            y_mean: self.y_mean,
            y_scale: self.y_scale,
            inputs: self.inputs(),
            targets: self.y.iter().copied().collect(),
            diagnostics: self.diagnostics.clone(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: GpFile = serde_json::from_str(s).map_err(|e| Error::Config(format!("gp model: {e}")))?;
        if f.format != GP_FORMAT || f.version != GP_VERSION {
            return Err(Error::Config(format!(
                "gp model: expected {GP_FORMAT} v{GP_VERSION}, found {} v{}",
                f.format, f.version
            )));
        }
        let mut m = Self::with_hyper(&f.inputs, &f.targets, f.y_mean, f.y_scale, f.hyper)?;
        m.diagnostics = f.diagnostics;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = self.to_json()?;
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s).map_err(|e| Error::parse(path, e))
    }
}

fn training_data(rows: &[Vec<f64>], y: &[f64]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Fit(format!("need at least 2 training rows, got {n}")));
    }
    if y.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: y.len(),
            context: "gp targets",
        });
    }
    let d = rows[0].len();
    if d == 0 {
        return Err(Error::Fit("inputs have no columns".into()));
    }
    for r in rows {
        if r.len() != d {
            return Err(Error::Dimension {
                expected: d,
                actual: r.len(),
                context: "gp input row",
            });
        }
    }
    if rows.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite training data".into()));
    }
    if rows.iter().all(|r| r == &rows[0]) {
        return Err(Error::Fit("all training inputs are identical".into()));
    }
    Ok((DMatrix::from_fn(n, d, |i, k| rows[i][k]), DVector::from_column_slice(y)))
}

/// `μ(x) + ζ·σ(x)`.
pub fn risk_bound(m: &GpModel, x: &[f64], zeta: f64) -> Result<f64> {
    if !(zeta >= 0.0) || !zeta.is_finite() {
        return Err(Error::Argument(format!(
            "confidence gain must be finite and non-negative, got {zeta}"
        )));
    }
    let (mu, sigma) = m.predict(x);
    Ok(mu + zeta * sigma)
}
