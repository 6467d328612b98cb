//! Sparse variational GP posterior moments and the analytic ELBO pieces.

use crate::error::{Error, Result};
use crate::kernels::{cholesky, gram_matrix, psi_matrix_over, InducingGrid, KernelParams};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Floor applied to posterior variances before taking logs.
pub const VAR_FLOOR: f64 = 1e-12;

/// `q(u) = N(mean, S)` over the inducing values of one GP component.
///
/// Fitting only ever uses the diagonal `cov_diag` with a zero mean; the
/// `full_cov` and nonzero `mean` fields exist for the symmetric-matrix
/// gradient and sign-symmetry checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalPosterior {
    pub grid: InducingGrid,
    pub mean: Vec<f64>,
    pub cov_diag: Vec<f64>,
    #[serde(skip)]
    pub full_cov: Option<DMatrix<f64>>,
}

impl VariationalPosterior {
    pub fn new_diag(grid: InducingGrid, cov_diag: Vec<f64>) -> Result<Self> {
        let m = grid.len();
        let q = Self {
            grid,
            mean: vec![0.0; m],
            cov_diag,
            full_cov: None,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn with_mean(mut self, mean: Vec<f64>) -> Result<Self> {
        self.mean = mean;
        self.validate()?;
        Ok(self)
    }

    /// Replace the covariance by a full symmetric matrix; `cov_diag` mirrors its diagonal.
    pub fn with_full_cov(mut self, s: DMatrix<f64>) -> Result<Self> {
        self.cov_diag = s.diagonal().iter().copied().collect();
        self.full_cov = Some(s);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.grid.len();
        if self.mean.len() != m || self.cov_diag.len() != m {
            return Err(Error::invalid("posterior dimensions must match the inducing grid"));
        }
        if self.cov_diag.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("covariance diagonal must be positive"));
        }
        if let Some(s) = &self.full_cov {
            if s.nrows() != m || s.ncols() != m || (s - s.transpose()).amax() > 1e-12 * s.amax() {
                return Err(Error::invalid("full covariance must be symmetric M x M"));
            }
        }
        Ok(())
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        match &self.full_cov {
            Some(s) => s.clone(),
            None => DMatrix::from_diagonal(&DVector::from_column_slice(&self.cov_diag)),
        }
    }

    pub fn mean_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mean)
    }

    pub fn has_zero_mean(&self) -> bool {
        self.mean.iter().all(|&v| v == 0.0)
    }
}

/// Prior quantities for one component: `K_zz` (with jitter) and its inverse.
#[derive(Debug, Clone)]
pub struct PriorFactor {
    pub params: KernelParams,
    pub k_zz: DMatrix<f64>,
    pub k_inv: DMatrix<f64>,
    pub log_det: f64,
}

impl PriorFactor {
    pub fn new(params: &KernelParams, grid: &InducingGrid, jitter: f64) -> Result<Self> {
        let k_zz = gram_matrix(params, grid.points(), grid.points(), jitter);
        Self::from_gram(params, k_zz, false)
    }

    pub fn from_gram(params: &KernelParams, k_zz: DMatrix<f64>, toeplitz: bool) -> Result<Self> {
        let chol = cholesky(&k_zz, "K_zz")?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let m = k_zz.nrows();
        let k_inv = if toeplitz {
            crate::kernels::solve_kzz(&k_zz, &DMatrix::identity(m, m), true)?
        } else {
            chol.inverse()
        };
        let k_inv = 0.5 * (&k_inv + k_inv.transpose());
        Ok(Self {
            params: *params,
            k_zz,
            k_inv,
            log_det,
        })
    }
}

/// Evaluators for the posterior mean and variance of `f` at arbitrary inputs.
#[derive(Debug, Clone)]
pub struct PosteriorMoments {
    params: KernelParams,
    points: Vec<f64>,
    kinv_m: DVector<f64>,
    // K^-1 S K^-1 - K^-1
    var_form: DMatrix<f64>,
}

impl PosteriorMoments {
    fn kvec(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.points.len(), self.points.iter().map(|&z| self.params.eval(t, z)))
    }

    pub fn mean_at(&self, t: f64) -> f64 {
        self.kvec(t).dot(&self.kinv_m)
    }

    /// Posterior variance, floored at [`VAR_FLOOR`].
    pub fn var_at(&self, t: f64) -> f64 {
        let k = self.kvec(t);
        (self.params.theta0 + k.dot(&(&self.var_form * &k))).max(VAR_FLOOR)
    }

    /// `E[f(t)^2] = mean^2 + var`.
    pub fn second_moment_at(&self, t: f64) -> f64 {
        let k = self.kvec(t);
        let mean = k.dot(&self.kinv_m);
        mean * mean + (self.params.theta0 + k.dot(&(&self.var_form * &k))).max(VAR_FLOOR)
    }

    /// `int_a^b E[f(t)^2] dt` in closed form.
    pub fn second_moment_integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let psi = psi_matrix_over(&self.params, &self.points, a, b);
        let mean_part = self.kinv_m.dot(&(&psi * &self.kinv_m));
        let var_part = self.params.theta0 * (b - a) + self.var_form.component_mul(&psi).sum();
        mean_part + var_part
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }
}

pub fn posterior_moments_with(q: &VariationalPosterior, prior: &PriorFactor) -> PosteriorMoments {
    let s = q.cov_matrix();
    let var_form = &prior.k_inv * s * &prior.k_inv - &prior.k_inv;
    PosteriorMoments {
        params: prior.params,
        points: q.grid.points().to_vec(),
        kinv_m: &prior.k_inv * q.mean_vector(),
        var_form: 0.5 * (&var_form + var_form.transpose()),
    }
}

/// Posterior moments using the default relative jitter on `K_zz`.
pub fn posterior_moments(q: &VariationalPosterior, params: &KernelParams) -> Result<PosteriorMoments> {
    q.validate()?;
    let prior = PriorFactor::new(params, &q.grid, params.default_jitter())?;
    Ok(posterior_moments_with(q, &prior))
}

/// `KL(q(u) || N(0, K_zz))`.
pub fn kl_to_prior(q: &VariationalPosterior, k_zz: &DMatrix<f64>) -> Result<f64> {
    let m = q.grid.len() as f64;
    let ck = cholesky(k_zz, "K_zz in KL")?;
    let s = q.cov_matrix();
    let cs = cholesky(&s, "S in KL")?;
    let log_det_k = 2.0 * ck.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_det_s = 2.0 * cs.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let trace = ck.solve(&s).trace();
    let mu = q.mean_vector();
    let quad = mu.dot(&ck.solve(&mu));
    Ok((0.5 * (trace + log_det_k - log_det_s - m + quad)).max(0.0))
}

/// `int_0^L (E[f]^2 + Var[f]) dt` from the analytic trace form.
pub fn expected_sq_integral(q: &VariationalPosterior, params: &KernelParams, psi: &DMatrix<f64>) -> Result<f64> {
    let prior = PriorFactor::new(params, &q.grid, params.default_jitter())?;
    Ok(expected_sq_integral_with(q, &prior, psi))
}

pub fn expected_sq_integral_with(q: &VariationalPosterior, prior: &PriorFactor, psi: &DMatrix<f64>) -> f64 {
    let kinv_m = &prior.k_inv * q.mean_vector();
    let mean_part = kinv_m.dot(&(psi * &kinv_m));
    let kinv_psi = &prior.k_inv * psi;
    let s_term = (&prior.k_inv * q.cov_matrix() * &kinv_psi).trace();
    mean_part + prior.params.theta0 * q.grid.domain_length() - kinv_psi.trace() + s_term
}

/// `E[log f^2]` for `f ~ N(0, var)`: `log(var / 2) - gamma`.
pub fn expected_log_square(var: f64) -> f64 {
    (var.max(VAR_FLOOR) / 2.0).ln() - EULER_GAMMA
}

/// `E[log f^2]` for `f ~ N(mean, var)`, as a Poisson mixture of digammas
/// (noncentral chi-square with one degree of freedom). Reduces to
/// [`expected_log_square`] at `mean = 0`.
pub fn expected_log_square_general(mean: f64, var: f64) -> f64 {
    let var = var.max(VAR_FLOOR);
    let half_lambda = 0.5 * mean * mean / var;
    if half_lambda == 0.0 {
        return expected_log_square(var);
    }
    let kmax = (half_lambda + 12.0 * half_lambda.sqrt() + 40.0).ceil() as usize;
    let mut acc = 0.0;
    for k in 0..=kmax {
        let kf = k as f64;
        let log_w = -half_lambda + kf * half_lambda.ln() - ln_gamma(kf + 1.0);
        acc += log_w.exp() * digamma(0.5 + kf);
    }
    var.ln() + std::f64::consts::LN_2 + acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::psi_matrix;
    use crate::quad::{integrate, QuadTol};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn grid(m: usize, l: f64) -> InducingGrid {
        InducingGrid::uniform(m, l).unwrap()
    }

    fn prior_posterior(params: &KernelParams, g: &InducingGrid) -> VariationalPosterior {
        let k = gram_matrix(params, g.points(), g.points(), params.default_jitter());
        VariationalPosterior::new_diag(g.clone(), vec![1.0; g.len()])
            .unwrap()
            .with_full_cov(k)
            .unwrap()
    }

    #[test]
    fn prior_covariance_recovers_prior_variance() {
        let params = KernelParams::new(2.5, 0.7).unwrap();
        let g = grid(5, 10.0);
        let q = prior_posterior(&params, &g);
        let pm = posterior_moments(&q, &params).unwrap();
        for t in [0.0, 1.3, 5.0, 9.9, 12.0] {
            assert!((pm.var_at(t) - 2.5).abs() < 1e-9, "t={t}");
            assert_eq!(pm.mean_at(t), 0.0);
        }
    }

    #[test]
    fn variance_matches_dense_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = KernelParams::new(1.7, 0.9).unwrap();
        let pts = vec![0.4, 1.9, 3.1];
        let g = InducingGrid::new(pts.clone(), 4.0).unwrap();
        let s: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..2.0)).collect();
        let q = VariationalPosterior::new_diag(g, s.clone()).unwrap();
        let pm = posterior_moments(&q, &params).unwrap();
        let k = gram_matrix(&params, &pts, &pts, params.default_jitter());
        let kinv = k.clone().try_inverse().unwrap();
        let sm = DMatrix::from_diagonal(&DVector::from_vec(s));
        for _ in 0..10 {
            let t = rng.random_range(0.0..4.0);
            let kt = DVector::from_iterator(3, pts.iter().map(|&z| params.eval(t, z)));
            // explicit inverse vs. factored solves
            let dense = params.theta0 - kt.dot(&(&kinv * &kt)) + kt.dot(&(&kinv * &sm * &kinv * &kt));
            let ch = k.clone().cholesky().unwrap();
            let a = ch.solve(&kt);
            let factored = params.theta0 - kt.dot(&a) + a.dot(&(&sm * &a));
            assert!((pm.var_at(t) - dense).abs() <= 1e-10);
            assert!((factored - dense).abs() <= 1e-9);
        }
    }

    #[test]
    fn kl_examples() {
        let g = InducingGrid::new(vec![0.5], 1.0).unwrap();
        let q = VariationalPosterior::new_diag(g.clone(), vec![1.0])
            .unwrap()
            .with_mean(vec![2.0])
            .unwrap();
        let k = DMatrix::from_element(1, 1, 1.0);
        assert!((kl_to_prior(&q, &k).unwrap() - 2.0).abs() < 1e-12);

        let params = KernelParams::new(1.2, 0.5).unwrap();
        let g = grid(4, 6.0);
        let q = prior_posterior(&params, &g);
        let k = gram_matrix(&params, g.points(), g.points(), params.default_jitter());
        assert!(kl_to_prior(&q, &k).unwrap().abs() < 1e-10);
    }

    #[test]
    fn kl_nonnegative_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = KernelParams::new(1.0, 1.0).unwrap();
        let g = grid(4, 5.0);
        let k = gram_matrix(&params, g.points(), g.points(), params.default_jitter());
        for _ in 0..50 {
            let s = (0..4).map(|_| rng.random_range(0.01..3.0)).collect();
            let m = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let q = VariationalPosterior::new_diag(g.clone(), s)
                .unwrap()
                .with_mean(m)
                .unwrap();
            let kl = kl_to_prior(&q, &k).unwrap();
            assert!(kl > 1e-10);
        }
    }

    #[test]
    fn sq_integral_prior_is_theta0_l() {
        let params = KernelParams::new(0.8, 0.3).unwrap();
        let g = grid(6, 6.0);
        let q = prior_posterior(&params, &g);
        let psi = psi_matrix(&params, &g);
        let v = expected_sq_integral(&q, &params, &psi).unwrap();
        assert!((v - 0.8 * 6.0).abs() < 1e-9);
    }

    #[test]
    fn sq_integral_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let l = rng.random_range(2.0..50.0);
            let m = rng.random_range(2..8usize);
            let params = KernelParams::new(
                rng.random_range(0.2..3.0),
                rng.random_range(0.05..2.0) * (m as f64 / l).powi(2),
            )
            .unwrap();
            let g = grid(m, l);
            let s = (0..m).map(|_| rng.random_range(0.05..2.0) * params.theta0).collect();
            let q = VariationalPosterior::new_diag(g.clone(), s).unwrap();
            let psi = psi_matrix(&params, &g);
            let closed = expected_sq_integral(&q, &params, &psi).unwrap();
            let pm = posterior_moments(&q, &params).unwrap();
            let num = integrate(
                |t| pm.second_moment_at(t),
                0.0,
                l,
                QuadTol {
                    abs: 1e-12,
                    rel: 1e-12,
                    max_intervals: 4000,
                },
            );
            assert!(
                ((closed - num.value) / num.value).abs() <= 1e-6,
                "closed={closed} quad={}",
                num.value
            );
            assert!((pm.second_moment_integral(0.0, l) - closed).abs() <= 1e-9 * closed.abs());
        }
    }

    #[test]
    fn sq_integral_decreases_as_s_shrinks() {
        let params = KernelParams::new(1.0, 0.5).unwrap();
        let g = grid(5, 8.0);
        let psi = psi_matrix(&params, &g);
        let mut last = f64::INFINITY;
        for scale in [2.0, 1.0, 0.5, 0.1, 0.01] {
            let q = VariationalPosterior::new_diag(g.clone(), vec![scale; 5]).unwrap();
            let v = expected_sq_integral(&q, &params, &psi).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn log_square_examples() {
        assert!((expected_log_square(2.0) + 0.577_215_66).abs() < 1e-8);
        assert!((expected_log_square(2.0 * std::f64::consts::E) - 0.422_784_34).abs() < 1e-8);
        assert!((expected_log_square_general(0.0, 3.0) - expected_log_square(3.0)).abs() < 1e-15);
        assert!((expected_log_square_general(1e-9, 3.0) - expected_log_square(3.0)).abs() < 1e-12);
        let a = expected_log_square_general(0.7, 0.4);
        let b = expected_log_square_general(-0.7, 0.4);
        assert_eq!(a, b);
    }

    #[test]
    fn log_square_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for &(mean, var) in &[(0.0, 1.3), (0.8, 0.5)] {
            let normal = Normal::new(mean, f64::sqrt(var)).unwrap();
            let n = 1_000_000;
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let x: f64 = normal.sample(&mut rng);
                let v = (x * x).ln();
                s += v;
                s2 += v * v;
            }
            let m = s / n as f64;
            let se = ((s2 / n as f64 - m * m) / n as f64).sqrt();
            let exact = expected_log_square_general(mean, var);
            assert!(
                (m - exact).abs() <= 3.0 * se,
                "mean={mean} mc={m} exact={exact} se={se}"
            );
        }
    }
}
