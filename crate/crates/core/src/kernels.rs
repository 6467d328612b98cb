//! Squared-exponential kernel, Gram and Psi matrices, and SPD solves.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};
use std::f64::consts::PI;

/// Relative diagonal jitter added to `K_zz`.
pub const DEFAULT_JITTER_REL: f64 = 1e-6;

/// Hyperparameters of `k(x, y) = theta0 * exp(-theta1 / 2 * (x - y)^2)`.
///
/// `theta0` is the output variance (intensity scale), `theta1` the inverse
/// squared lengthscale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub theta0: f64,
    pub theta1: f64,
}

impl KernelParams {
    pub fn new(theta0: f64, theta1: f64) -> Result<Self> {
        if !(theta0 > 0.0 && theta0.is_finite() && theta1 > 0.0 && theta1.is_finite()) {
            return Err(Error::invalid(format!(
                "kernel parameters must be positive, got theta0={theta0}, theta1={theta1}"
            )));
        }
        Ok(Self { theta0, theta1 })
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let d = x - y;
        self.theta0 * (-0.5 * self.theta1 * d * d).exp()
    }

    pub fn default_jitter(&self) -> f64 {
        DEFAULT_JITTER_REL * self.theta0
    }
}

pub fn kernel_eval(params: &KernelParams, x: f64, y: f64) -> f64 {
    params.eval(x, y)
}

/// Inducing locations on `[0, domain_length]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducingGrid {
    points: Vec<f64>,
    domain_length: f64,
}

impl InducingGrid {
    pub fn new(points: Vec<f64>, domain_length: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("inducing grid must be nonempty"));
        }
        if !(domain_length >= 0.0 && domain_length.is_finite()) {
            return Err(Error::invalid("domain length must be finite and nonnegative"));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("inducing points must be strictly increasing"));
        }
        if points.iter().any(|&z| z < 0.0 || z > domain_length) {
            return Err(Error::invalid("inducing points must lie inside the domain"));
        }
        Ok(Self { points, domain_length })
    }

    /// `m` equally spaced points including both endpoints (the midpoint when `m == 1`).
    pub fn uniform(m: usize, domain_length: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("need at least one inducing point"));
        }
        if !(domain_length > 0.0) {
            return Err(Error::invalid("domain length must be positive"));
        }
        let points = if m == 1 {
            vec![0.5 * domain_length]
        } else {
            let h = domain_length / (m - 1) as f64;
            (0..m).map(|i| (i as f64 * h).min(domain_length)).collect()
        };
        Self::new(points, domain_length)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }
}

/// Entry `(i, j) = k(xs_i, ys_j)`; `jitter` is added to the diagonal when the
/// two inputs are the same point set.
pub fn gram_matrix(params: &KernelParams, xs: &[f64], ys: &[f64], jitter: f64) -> DMatrix<f64> {
    let mut k = DMatrix::from_fn(xs.len(), ys.len(), |i, j| params.eval(xs[i], ys[j]));
    if xs == ys {
        for i in 0..xs.len() {
            k[(i, i)] += jitter;
        }
    }
    k
}

/// `erf(hi) - erf(lo)` without cancellation in the tails.
fn erf_diff(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        erfc(lo) - erfc(hi)
    } else if hi <= 0.0 {
        erfc(-hi) - erfc(-lo)
    } else {
        erf(hi) - erf(lo)
    }
}

/// `Psi(z, z') = int_a^b k(z, t) k(t, z') dt` in closed form.
pub fn psi_entry(params: &KernelParams, z: f64, zp: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let s = params.theta1.sqrt();
    let zbar = 0.5 * (z + zp);
    let d = z - zp;
    params.theta0
        * params.theta0
        * 0.5
        * (PI / params.theta1).sqrt()
        * (-0.25 * params.theta1 * d * d).exp()
        * erf_diff(s * (a - zbar), s * (b - zbar))
}

/// Psi matrix over an arbitrary interval `[a, b]`.
pub fn psi_matrix_over(params: &KernelParams, points: &[f64], a: f64, b: f64) -> DMatrix<f64> {
    let m = points.len();
    let mut psi = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = psi_entry(params, points[i], points[j], a, b);
            psi[(i, j)] = v;
            psi[(j, i)] = v;
        }
    }
    psi
}

/// Psi matrix over the grid's full domain `[0, L]`.
pub fn psi_matrix(params: &KernelParams, grid: &InducingGrid) -> DMatrix<f64> {
    psi_matrix_over(params, grid.points(), 0.0, grid.domain_length())
}

pub fn cholesky(a: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(a.clone()).ok_or_else(|| Error::not_pd(context))
}

/// Solve `A X = B` for symmetric positive-definite `A`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(cholesky(a, "solve_spd")?.solve(b))
}

pub fn log_det_spd(a: &DMatrix<f64>) -> Result<f64> {
    let c = cholesky(a, "log_det_spd")?;
    Ok(2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// First column of `a` if it is a symmetric Toeplitz matrix within `tol`.
pub fn toeplitz_column(a: &DMatrix<f64>, tol: f64) -> Option<Vec<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return None;
    }
    let col: Vec<f64> = (0..n).map(|i| a[(i, 0)]).collect();
    let scale = col[0].abs().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..n {
            if (a[(i, j)] - col[i.abs_diff(j)]).abs() > tol * scale {
                return None;
            }
        }
    }
    Some(col)
}

/// Levinson recursion for a symmetric positive-definite Toeplitz system with
/// first column `r`, one right-hand side per column of `b`. O(M^2) per column.
pub fn solve_toeplitz(r: &[f64], b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = r.len();
    if n == 0 || b.nrows() != n {
        return Err(Error::invalid("Toeplitz system dimensions do not match"));
    }
    if !(r[0] > 0.0) {
        return Err(Error::not_pd("Toeplitz diagonal"));
    }
    let rr: Vec<f64> = r[1..].iter().map(|v| v / r[0]).collect();
    let mut out = DMatrix::zeros(n, b.ncols());
    for c in 0..b.ncols() {
        let rhs: Vec<f64> = (0..n).map(|i| b[(i, c)] / r[0]).collect();
        let x = levinson(&rr, &rhs)?;
        for i in 0..n {
            out[(i, c)] = x[i];
        }
    }
    Ok(out)
}

// Unit-diagonal Toeplitz matrix with off-diagonals `rr` (length n - 1).
fn levinson(rr: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let mut x = vec![0.0; n];
    x[0] = b[0];
    if n == 1 {
        return Ok(x);
    }
    let mut y = vec![0.0; n];
    y[0] = -rr[0];
    let mut beta = 1.0;
    let mut alpha = -rr[0];
    let mut tmp = vec![0.0; n];
    for k in 1..n {
        beta *= 1.0 - alpha * alpha;
        if !(beta > 0.0) {
            return Err(Error::not_pd("Levinson recursion"));
        }
        let mu = (b[k] - (0..k).map(|i| rr[i] * x[k - 1 - i]).sum::<f64>()) / beta;
        for i in 0..k {
            tmp[i] = x[i] + mu * y[k - 1 - i];
        }
        x[..k].copy_from_slice(&tmp[..k]);
        x[k] = mu;
        if k < n - 1 {
            alpha = (-rr[k] - (0..k).map(|i| rr[i] * y[k - 1 - i]).sum::<f64>()) / beta;
            for i in 0..k {
                tmp[i] = y[i] + alpha * y[k - 1 - i];
            }
            y[..k].copy_from_slice(&tmp[..k]);
            y[k] = alpha;
        }
    }
    Ok(x)
}

/// Solve with `K_zz`, taking the Toeplitz path when requested and the matrix
/// has constant diagonals.
pub fn solve_kzz(a: &DMatrix<f64>, b: &DMatrix<f64>, toeplitz: bool) -> Result<DMatrix<f64>> {
    if toeplitz {
        if let Some(col) = toeplitz_column(a, 1e-14) {
            return solve_toeplitz(&col, b);
        }
    }
    solve_spd(a, b)
}
