//! Stationarity solve `dELBO/dS = 0` for diagonal `S`.
//!
//! Setting the diagonal gradient to zero gives `S^-1 = 2wA - 2B(S) + C` with
//! `A = diag(K^-1 Psi K^-1)`, `B = sum_k p_k a_k^2 / sigma_k^2` and
//! `C = diag(K^-1)`. The damped update on the precision reduces to
//! `S^-1 <- S^-1 - 2 d grad`. A sweep is kept only if it does not lower the
//! ELBO; otherwise, and once the sweep budget is spent, a Newton step with
//! backtracking takes over. The component ELBO is strictly concave in the
//! diagonal of `S`, so the stationary point is its unique maximiser.

use super::objective::{positive, ComponentProblem};
use crate::error::{Error, Result};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointConfig {
    /// Damping of the precision update, in `(0, 1]`.
    pub damping: f64,
    /// Target sup-norm of the gradient.
    pub tol: f64,
    pub max_inner_iters: usize,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-6,
            max_inner_iters: 500,
        }
    }
}

impl FixedPointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid("damping must lie in (0, 1]"));
        }
        if !(self.tol > 0.0) || self.max_inner_iters == 0 {
            return Err(Error::invalid(
                "fixed-point tolerance and iteration budget must be positive",
            ));
        }
        Ok(())
    }
}

/// Fixed-point sweeps attempted before switching to Newton steps.
const FIXED_POINT_SWEEPS: usize = 30;

#[derive(Debug, Clone)]
pub struct StationarySolution {
    pub s: Vec<f64>,
    pub elbo: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn solve_stationary_s(
    problem: &ComponentProblem,
    p: &[f64],
    warm: &[f64],
    fp: &FixedPointConfig,
) -> Result<StationarySolution> {
    fp.validate()?;
    positive(warm)?;
    if warm.len() != problem.m() {
        return Err(Error::invalid("warm start has the wrong dimension"));
    }
    let mut s = warm.to_vec();
    let mut f = problem.elbo_diag(&s, p);
    let mut sweeps = 0;
    for it in 0..fp.max_inner_iters {
        let g = problem.grad_diag(&s, p);
        let gn = sup_norm(&g);
        if gn <= fp.tol {
            return Ok(StationarySolution {
                s,
                elbo: f,
                grad_norm: gn,
                iterations: it,
            });
        }
        if sweeps < FIXED_POINT_SWEEPS {
            sweeps += 1;
            let cand: Vec<f64> = s
                .iter()
                .zip(&g)
                .map(|(si, gi)| 1.0 / (1.0 / si - 2.0 * fp.damping * gi))
                .collect();
            if cand.iter().all(|v| *v > 0.0 && v.is_finite()) {
                let fc = problem.elbo_diag(&cand, p);
                if fc >= f {
                    s = cand;
                    f = fc;
                    continue;
                }
            }
            sweeps = FIXED_POINT_SWEEPS;
        }
        match newton_step(problem, p, &s, &g, f) {
            Some((cand, fc)) => {
                s = cand;
                f = fc;
            }
            None => {
                return Err(Error::NoConvergence {
                    context: "variational covariance line search".into(),
                    iterations: it,
                    residual: gn,
                })
            }
        }
    }
    let gn = sup_norm(&problem.grad_diag(&s, p));
    if gn <= fp.tol {
        return Ok(StationarySolution {
            s,
            elbo: f,
            grad_norm: gn,
            iterations: fp.max_inner_iters,
        });
    }
    Err(Error::NoConvergence {
        context: "variational covariance stationarity".into(),
        iterations: fp.max_inner_iters,
        residual: gn,
    })
}

fn newton_step(problem: &ComponentProblem, p: &[f64], s: &[f64], g: &[f64], f: f64) -> Option<(Vec<f64>, f64)> {
    let neg_h = -problem.hessian_diag(s, p);
    let dir = neg_h.cholesky()?.solve(&DVector::from_column_slice(g));
    // ELBO evaluations carry rounding noise of a few ulps of |f|
    let slack = 8.0 * f64::EPSILON * f.abs().max(1.0);
    let mut step = 1.0;
    for _ in 0..60 {
        let cand: Vec<f64> = s.iter().zip(dir.iter()).map(|(si, di)| si + step * di).collect();
        if cand.iter().all(|v| *v > 0.0) {
            let fc = problem.elbo_diag(&cand, p);
            if fc >= f - slack {
                return Some((cand, fc));
            }
        }
        step *= 0.5;
    }
    None
}
