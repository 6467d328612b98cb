//! ELBO of one GP component given the branching weights, and its gradients.
//!
//! Both halves of the model share one shape:
//!
//! ```text
//! ELBO(S) = -w (theta0 L - Tr(K^-1 Psi) + Tr(K^-1 S K^-1 Psi))
//!           + sum_k p_k E[log f(x_k)^2]
//!           - KL(q(u) || p(u))
//! ```
//!
//! with `w = 1`, `x_k = t_i`, `p_k = p_ii` for the baseline (one copy per
//! sequence when pooling), and `w = N`, `x_k = tau_ij`, `p_k = p_ij` for the
//! triggering kernel.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gp::{expected_log_square, expected_log_square_general, PriorFactor, VAR_FLOOR};
use crate::kernels::{cholesky, gram_matrix, psi_matrix, InducingGrid, KernelParams};
use nalgebra::{DMatrix, DVector};

/// Everything needed to rebuild a [`ComponentProblem`] at new hyperparameters.
#[derive(Debug, Clone)]
pub struct ComponentSpec {
    pub grid: InducingGrid,
    pub weight: f64,
    pub points: Vec<f64>,
    pub jitter_rel: f64,
    pub toeplitz: bool,
    pub exec: Exec,
}

impl ComponentSpec {
    pub fn build(&self, params: &KernelParams) -> Result<ComponentProblem> {
        ComponentProblem::new(params, self)
    }
}

/// The three additive pieces of the component ELBO.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    /// Weighted `int (E[f]^2 + Var[f])`, entering with a minus sign.
    pub integral: f64,
    /// `sum_k p_k E[log f(x_k)^2]`.
    pub data: f64,
    pub kl: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        -self.integral + self.data - self.kl
    }
}

/// Precomputed matrices for one component at fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct ComponentProblem {
    pub prior: PriorFactor,
    pub grid: InducingGrid,
    pub weight: f64,
    pub psi: DMatrix<f64>,
    /// `K^-1 Psi K^-1`.
    pub kpk: DMatrix<f64>,
    tr_kinv_psi: f64,
    /// Row-major `n x M`: `a_k = K^-1 k(z, x_k)`.
    proj: Vec<f64>,
    /// `theta0 - k_k^T K^-1 k_k`.
    base: Vec<f64>,
    m: usize,
    exec: Exec,
}

impl ComponentProblem {
    pub fn new(params: &KernelParams, spec: &ComponentSpec) -> Result<Self> {
        let grid = spec.grid.clone();
        let z = grid.points();
        let m = z.len();
        let jitter = spec.jitter_rel * params.theta0;
        let k_zz = gram_matrix(params, z, z, jitter);
        let prior = PriorFactor::from_gram(params, k_zz, spec.toeplitz)?;
        let psi = psi_matrix(params, &grid);
        let kpk = &prior.k_inv * &psi * &prior.k_inv;
        let kpk = 0.5 * (&kpk + kpk.transpose());
        let tr_kinv_psi = (&prior.k_inv * &psi).trace();
        let n = spec.points.len();
        let rows = spec.exec.map_range(n, |k| {
            let x = spec.points[k];
            let kv = DVector::from_iterator(m, z.iter().map(|&zz| params.eval(x, zz)));
            let a = &prior.k_inv * &kv;
            let base = params.theta0 - kv.dot(&a);
            (a, base)
        });
        let mut proj = Vec::with_capacity(n * m);
        let mut base = Vec::with_capacity(n);
        for (a, b) in rows {
            proj.extend(a.iter());
            base.push(b);
        }
        Ok(Self {
            prior,
            grid,
            weight: spec.weight,
            psi,
            kpk,
            tr_kinv_psi,
            proj,
            base,
            m,
            exec: spec.exec,
        })
    }

    pub fn n_points(&self) -> usize {
        self.base.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn params(&self) -> &KernelParams {
        &self.prior.params
    }

    fn a(&self, k: usize) -> &[f64] {
        &self.proj[k * self.m..(k + 1) * self.m]
    }

    /// `theta0 - k^T K^-1 k + a^T S a` at data point `k`, diagonal `S`, unfloored.
    fn raw_variance(&self, k: usize, s: &[f64]) -> f64 {
        self.base[k] + self.a(k).iter().zip(s).map(|(a, s)| a * a * s).sum::<f64>()
    }

    /// Posterior variances at the data points (floored).
    pub fn variances(&self, s: &[f64]) -> Vec<f64> {
        (0..self.n_points())
            .map(|k| self.raw_variance(k, s).max(VAR_FLOOR))
            .collect()
    }

    fn check_weights(&self, p: &[f64]) {
        assert_eq!(
            p.len(),
            self.n_points(),
            "branching weights do not match the data points"
        );
    }

    /// ELBO terms for a diagonal `S` and zero mean.
    pub fn terms_diag(&self, s: &[f64], p: &[f64]) -> ElboTerms {
        self.check_weights(p);
        let l = self.grid.domain_length();
        let th0 = self.params().theta0;
        let s_trace: f64 = s.iter().enumerate().map(|(i, v)| v * self.kpk[(i, i)]).sum();
        let integral = self.weight * (th0 * l - self.tr_kinv_psi + s_trace);
        let data = self.exec.sum(self.n_points(), |k| {
            if p[k] == 0.0 {
                0.0
            } else {
                p[k] * expected_log_square(self.raw_variance(k, s))
            }
        });
        let trace_kinv_s: f64 = s.iter().enumerate().map(|(i, v)| v * self.prior.k_inv[(i, i)]).sum();
        let log_det_s: f64 = s.iter().map(|v| v.ln()).sum();
        let kl = 0.5 * (trace_kinv_s + self.prior.log_det - log_det_s - self.m as f64);
        ElboTerms { integral, data, kl }
    }

    pub fn elbo_diag(&self, s: &[f64], p: &[f64]) -> f64 {
        self.terms_diag(s, p).total()
    }

    /// ELBO for a full symmetric positive-definite `S` and optional mean.
    pub fn terms_full(&self, s: &DMatrix<f64>, mean: Option<&DVector<f64>>, p: &[f64]) -> Result<ElboTerms> {
        self.check_weights(p);
        let m = self.m;
        let l = self.grid.domain_length();
        let th0 = self.params().theta0;
        let kinv = &self.prior.k_inv;
        let zero = DVector::zeros(m);
        let mean = mean.unwrap_or(&zero);
        let kinv_m = kinv * mean;
        let integral = self.weight
            * (th0 * l - self.tr_kinv_psi + self.kpk.component_mul(s).sum() + kinv_m.dot(&(&self.psi * &kinv_m)));
        let data = self.exec.sum(self.n_points(), |k| {
            if p[k] == 0.0 {
                return 0.0;
            }
            let a = DVector::from_column_slice(self.a(k));
            let var = self.base[k] + a.dot(&(s * &a));
            let v = a.dot(mean);
            p[k] * expected_log_square_general(v, var)
        });
        let cs = cholesky(s, "S")?;
        let log_det_s = 2.0 * cs.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let kl = 0.5 * ((kinv * s).trace() + self.prior.log_det - log_det_s - m as f64 + mean.dot(&kinv_m));
        Ok(ElboTerms { integral, data, kl })
    }

    pub fn elbo_full(&self, s: &DMatrix<f64>, mean: Option<&DVector<f64>>, p: &[f64]) -> Result<f64> {
        Ok(self.terms_full(s, mean, p)?.total())
    }

    /// Diagonal of `dELBO/dS` for diagonal `S`:
    /// `-w diag(K^-1 Psi K^-1) + sum_k p_k a_k^2 / sigma_k^2 - (diag(K^-1) - S^-1) / 2`.
    pub fn grad_diag(&self, s: &[f64], p: &[f64]) -> Vec<f64> {
        self.check_weights(p);
        let m = self.m;
        let data = self.data_grad_diag(s, p);
        (0..m)
            .map(|i| -self.weight * self.kpk[(i, i)] + data[i] - 0.5 * (self.prior.k_inv[(i, i)] - 1.0 / s[i]))
            .collect()
    }

    fn data_grad_diag(&self, s: &[f64], p: &[f64]) -> Vec<f64> {
        let m = self.m;
        let partials = self.exec.chunked(self.n_points(), |range| {
            let mut acc = vec![0.0; m];
            for k in range {
                if p[k] == 0.0 {
                    continue;
                }
                let w = p[k] / self.raw_variance(k, s).max(VAR_FLOOR);
                for (acc, a) in acc.iter_mut().zip(self.a(k)) {
                    *acc += w * a * a;
                }
            }
            acc
        });
        partials.into_iter().fold(vec![0.0; m], |mut tot, part| {
            tot.iter_mut().zip(part).for_each(|(t, v)| *t += v);
            tot
        })
    }

    /// Hessian of the ELBO in the diagonal coordinates of `S` (negative definite).
    pub fn hessian_diag(&self, s: &[f64], p: &[f64]) -> DMatrix<f64> {
        let m = self.m;
        let partials = self.exec.chunked(self.n_points(), |range| {
            let mut h = DMatrix::zeros(m, m);
            for k in range {
                if p[k] == 0.0 {
                    continue;
                }
                let v = self.raw_variance(k, s).max(VAR_FLOOR);
                let w = p[k] / (v * v);
                let a = self.a(k);
                for i in 0..m {
                    let wi = w * a[i] * a[i];
                    for j in 0..m {
                        h[(i, j)] -= wi * a[j] * a[j];
                    }
                }
            }
            h
        });
        let mut h = partials.into_iter().fold(DMatrix::zeros(m, m), |acc, x| acc + x);
        for i in 0..m {
            h[(i, i)] -= 0.5 / (s[i] * s[i]);
        }
        h
    }

    /// `dELBO/dS` for symmetric `S`, treating `S_ab = S_ba` as one variable
    /// (`2G - G ∘ I` with `G` the unconstrained gradient). Zero mean.
    pub fn grad_full(&self, s: &DMatrix<f64>, p: &[f64]) -> Result<DMatrix<f64>> {
        self.check_weights(p);
        let m = self.m;
        let partials = self.exec.chunked(self.n_points(), |range| {
            let mut acc = DMatrix::zeros(m, m);
            for k in range {
                if p[k] == 0.0 {
                    continue;
                }
                let a = DVector::from_column_slice(self.a(k));
                let var = (self.base[k] + a.dot(&(s * &a))).max(VAR_FLOOR);
                acc += (&a * a.transpose()) * (p[k] / var);
            }
            acc
        });
        let data = partials.into_iter().fold(DMatrix::zeros(m, m), |acc, x| acc + x);
        let s_inv = cholesky(s, "S")?.inverse();
        let g = -self.weight * &self.kpk + data + 0.5 * (s_inv - &self.prior.k_inv);
        let mut out = 2.0 * &g;
        for i in 0..m {
            out[(i, i)] = g[(i, i)];
        }
        Ok(0.5 * (&out + out.transpose()))
    }
}

/// Which half of the model a component describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Mu,
    Phi,
}

pub(crate) fn positive(s: &[f64]) -> Result<()> {
    if s.iter().all(|v| *v > 0.0 && v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid("diagonal covariance must be positive"))
    }
}
