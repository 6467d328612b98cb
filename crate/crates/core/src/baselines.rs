//! Comparator estimators: parametric exponential Hawkes (maximum likelihood)
//! and the MISD histogram EM.

use crate::emv::{lower_bound, update_branching, BranchingMatrix};
use crate::error::{Error, Result};
use crate::events::EventSequence;
use crate::exec::Exec;
use crate::model::{CompensatorEdge, HawkesModel};
use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// `lambda(t) = mu + sum alpha exp(-beta (t - t_j))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParametricHawkesParams {
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl ParametricHawkesParams {
    pub fn new(mu: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(mu >= 0.0 && alpha >= 0.0 && beta > 0.0) || !(mu + alpha + beta).is_finite() {
            return Err(Error::invalid("parametric Hawkes needs mu, alpha >= 0 and beta > 0"));
        }
        Ok(Self { mu, alpha, beta })
    }

    fn from_log(x: &[f64]) -> Self {
        Self {
            mu: x[0].exp(),
            alpha: x[1].exp(),
            beta: x[2].exp(),
        }
    }

    fn to_log(self) -> [f64; 3] {
        [self.mu.ln(), self.alpha.ln(), self.beta.ln()]
    }
}

impl HawkesModel for ParametricHawkesParams {
    fn baseline(&self, _t: f64) -> f64 {
        self.mu
    }
    fn trigger(&self, tau: f64) -> f64 {
        if tau > 0.0 {
            self.alpha * (-self.beta * tau).exp()
        } else {
            0.0
        }
    }
    fn trigger_support(&self) -> f64 {
        f64::INFINITY
    }
    fn baseline_integral(&self, a: f64, b: f64) -> f64 {
        self.mu * (b - a).max(0.0)
    }
    fn trigger_integral(&self, u: f64) -> f64 {
        if u <= 0.0 {
            0.0
        } else {
            self.alpha / self.beta * -(-self.beta * u).exp_m1()
        }
    }
    fn baseline_bound(&self, _a: f64, _b: f64) -> f64 {
        self.mu
    }
    fn trigger_bound(&self, a: f64, b: f64) -> f64 {
        if b <= 0.0 {
            0.0
        } else {
            self.alpha * (-self.beta * a.max(0.0)).exp()
        }
    }
    fn branching_ratio(&self) -> f64 {
        self.alpha / self.beta
    }
}

/// Log-likelihood and its gradient in `(mu, alpha, beta)` for one sequence,
/// via the usual `O(N)` recursions for the exponential kernel.
fn ph_loglik_grad(p: &ParametricHawkesParams, seq: &EventSequence) -> (f64, [f64; 3]) {
    let ParametricHawkesParams { mu, alpha, beta } = *p;
    let t_end = seq.t_end();
    let (mut a, mut b) = (0.0, 0.0);
    let mut prev: Option<f64> = None;
    let mut ll = 0.0;
    let mut g = [0.0; 3];
    for &t in seq.times() {
        if let Some(tp) = prev {
            let d = t - tp;
            let e = (-beta * d).exp();
            b = e * (b + d * (1.0 + a));
            a = e * (1.0 + a);
        }
        prev = Some(t);
        let lam = mu + alpha * a;
        ll += lam.ln();
        g[0] += 1.0 / lam;
        g[1] += a / lam;
        g[2] -= alpha * b / lam;
        // compensator of this event's offspring up to T
        let u = t_end - t;
        let em = -(-beta * u).exp_m1();
        ll -= alpha / beta * em;
        g[1] -= em / beta;
        g[2] -= alpha * (u * (-beta * u).exp() / beta - em / (beta * beta));
    }
    ll -= mu * t_end;
    g[0] -= t_end;
    (ll, g)
}

/// Pooled log-likelihood and gradient.
pub fn ph_loglik(p: &ParametricHawkesParams, seqs: &[EventSequence]) -> (f64, [f64; 3]) {
    seqs.iter()
        .map(|s| ph_loglik_grad(p, s))
        .fold((0.0, [0.0; 3]), |(l, g), (l2, g2)| {
            (l + l2, [g[0] + g2[0], g[1] + g2[1], g[2] + g2[2]])
        })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParametricFit {
    pub params: ParametricHawkesParams,
    pub loglik: f64,
    /// Infinity norm of the gradient with respect to the log-parameters.
    pub grad_norm: f64,
}

/// Gradient tolerance (log-parameter space) at which the polish stops.
pub const PH_GRAD_TOL: f64 = 1e-6;

struct PhCost<'a> {
    seqs: &'a [EventSequence],
}

impl CostFunction for PhCost<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let p = ParametricHawkesParams::from_log(x);
        if !(p.alpha < p.beta) || !(p.mu > 0.0) || !x.iter().all(|v| v.is_finite()) {
            return Ok(f64::INFINITY);
        }
        let ll = ph_loglik(&p, self.seqs).0;
        Ok(if ll.is_finite() { -ll } else { f64::INFINITY })
    }
}

fn log_objective(seqs: &[EventSequence], x: &[f64]) -> Option<(f64, [f64; 3])> {
    let p = ParametricHawkesParams::from_log(x);
    if !(p.alpha < p.beta) || !(p.mu > 0.0) {
        return None;
    }
    let (ll, g) = ph_loglik(&p, seqs);
    let gx = [g[0] * p.mu, g[1] * p.alpha, g[2] * p.beta];
    (ll.is_finite() && gx.iter().all(|v| v.is_finite())).then_some((ll, gx))
}

/// Levenberg–Marquardt polish on the log-parameters with a finite-difference
/// Hessian of the analytic gradient.
fn polish(seqs: &[EventSequence], mut x: [f64; 3]) -> Option<([f64; 3], f64, f64)> {
    let (mut f, mut g) = log_objective(seqs, &x)?;
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let gn = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gn <= PH_GRAD_TOL {
            return Some((x, f, gn));
        }
        let h = 1e-5;
        let mut hess = DMatrix::zeros(3, 3);
        for j in 0..3 {
            let mut up = x;
            let mut dn = x;
            up[j] += h;
            dn[j] -= h;
            let gu = log_objective(seqs, &up).map(|r| r.1);
            let gd = log_objective(seqs, &dn).map(|r| r.1);
            let (gu, gd) = match (gu, gd) {
                (Some(a), Some(b)) => (a, b),
                _ => ([0.0; 3], [0.0; 3]),
            };
            for i in 0..3 {
                hess[(i, j)] = (gu[i] - gd[i]) / (2.0 * h);
            }
        }
        let neg_h = -0.5 * (&hess + hess.transpose());
        let gv = DVector::from_column_slice(&g);
        let mut improved = false;
        while lambda < 1e12 {
            let mut m = neg_h.clone();
            for i in 0..3 {
                m[(i, i)] += lambda * (1.0 + neg_h[(i, i)].abs());
            }
            if let Some(ch) = m.cholesky() {
                let d = ch.solve(&gv);
                let cand = [x[0] + d[0], x[1] + d[1], x[2] + d[2]];
                if let Some((fc, gc)) = log_objective(seqs, &cand) {
                    if fc >= f {
                        x = cand;
                        f = fc;
                        g = gc;
                        lambda = (lambda * 0.1).max(1e-12);
                        improved = true;
                        break;
                    }
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            let gn = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            return Some((x, f, gn));
        }
    }
    let gn = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Some((x, f, gn))
}

/// Maximum likelihood for the exponential Hawkes model on pooled sequences.
/// Three Nelder–Mead starts in log space, then a Levenberg–Marquardt polish
/// of the best; `alpha / beta < 1` is enforced throughout.
pub fn fit_parametric(seqs: &[EventSequence], exec: Exec) -> Result<ParametricFit> {
    let first = seqs.first().ok_or_else(|| Error::invalid("no event sequences given"))?;
    let t_end = first.t_end();
    let n: usize = seqs.iter().map(EventSequence::len).sum();
    if n < 2 {
        return Err(Error::invalid("parametric fit needs at least two events"));
    }
    let rate = n as f64 / (seqs.len() as f64 * t_end);
    let starts = [
        ParametricHawkesParams::new(0.5 * rate, 0.5, 1.0)?,
        ParametricHawkesParams::new(0.8 * rate, 0.2, 0.5)?,
        ParametricHawkesParams::new(0.3 * rate, 1.4, 2.0)?,
    ];
    let runs = exec.map_range(starts.len(), |k| {
        let x0 = starts[k].to_log().to_vec();
        let simplex = vec![
            x0.clone(),
            vec![x0[0] + 0.3, x0[1], x0[2]],
            vec![x0[0], x0[1] + 0.3, x0[2]],
            vec![x0[0], x0[1], x0[2] + 0.3],
        ];
        let solver = NelderMead::new(simplex).with_sd_tolerance(1e-10).ok()?;
        let res = Executor::new(PhCost { seqs }, solver)
            .configure(|s| s.max_iters(2000))
            .run()
            .ok()?;
        let best = res.state().get_best_param()?.clone();
        let cost = res.state().get_best_cost();
        cost.is_finite().then_some((best, cost))
    });
    let (best, _) = runs
        .into_iter()
        .flatten()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::NoConvergence {
            context: "parametric Hawkes multi-start search".into(),
            iterations: 2000,
            residual: f64::NAN,
        })?;
    let (x, ll, gn) = polish(seqs, [best[0], best[1], best[2]]).ok_or_else(|| Error::NoConvergence {
        context: "parametric Hawkes polish".into(),
        iterations: 0,
        residual: f64::NAN,
    })?;
    if gn > PH_GRAD_TOL {
        return Err(Error::NoConvergence {
            context: "parametric Hawkes polish".into(),
            iterations: 500,
            residual: gn,
        });
    }
    Ok(ParametricFit {
        params: ParametricHawkesParams::from_log(&x),
        loglik: ll,
        grad_norm: gn,
    })
}

/// Piecewise-constant triggering kernel on a uniform partition of `[0, t_phi]`
/// with a constant background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramKernel {
    pub mu: f64,
    pub t_phi: f64,
    pub heights: Vec<f64>,
}

impl HistogramKernel {
    pub fn new(mu: f64, t_phi: f64, heights: Vec<f64>) -> Result<Self> {
        if !(mu >= 0.0 && mu.is_finite()) || !(t_phi > 0.0 && t_phi.is_finite()) || heights.is_empty() {
            return Err(Error::invalid(
                "histogram kernel needs mu >= 0, t_phi > 0 and at least one bin",
            ));
        }
        if heights.iter().any(|h| !(*h >= 0.0 && h.is_finite())) {
            return Err(Error::invalid("histogram heights must be nonnegative"));
        }
        Ok(Self { mu, t_phi, heights })
    }

    pub fn n_bins(&self) -> usize {
        self.heights.len()
    }

    pub fn bin_width(&self) -> f64 {
        self.t_phi / self.heights.len() as f64
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        let w = self.bin_width();
        (0..=self.n_bins()).map(|k| k as f64 * w).collect()
    }

    /// Bin of a lag in `(0, t_phi]`.
    pub fn bin_of(&self, tau: f64) -> usize {
        ((tau / self.bin_width()) as usize).min(self.n_bins() - 1)
    }
}

impl HawkesModel for HistogramKernel {
    fn baseline(&self, _t: f64) -> f64 {
        self.mu
    }
    fn trigger(&self, tau: f64) -> f64 {
        if tau <= 0.0 || tau > self.t_phi {
            0.0
        } else {
            self.heights[self.bin_of(tau)]
        }
    }
    fn trigger_support(&self) -> f64 {
        self.t_phi
    }
    fn trigger_breaks(&self) -> Vec<f64> {
        self.bin_edges()
    }
    fn baseline_integral(&self, a: f64, b: f64) -> f64 {
        self.mu * (b - a).max(0.0)
    }
    fn trigger_integral(&self, u: f64) -> f64 {
        let u = u.min(self.t_phi);
        let w = self.bin_width();
        self.heights
            .iter()
            .enumerate()
            .map(|(k, h)| h * (u - k as f64 * w).clamp(0.0, w))
            .sum()
    }
    fn baseline_bound(&self, _a: f64, _b: f64) -> f64 {
        self.mu
    }
    fn trigger_bound(&self, a: f64, b: f64) -> f64 {
        let lo = a.max(0.0);
        let hi = b.min(self.t_phi);
        if hi <= 0.0 || lo > self.t_phi {
            return 0.0;
        }
        let (k0, k1) = (self.bin_of(lo.max(1e-300)), self.bin_of(hi.max(1e-300)));
        self.heights[k0..=k1].iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct MisdFit {
    pub kernel: HistogramKernel,
    pub branching: Vec<BranchingMatrix>,
    /// Lower bound (with entropy, full-support compensator) after each M-step.
    pub q_trace: Vec<f64>,
    pub max_row_deviation: f64,
}

/// MISD: EM with a constant background and a histogram triggering kernel.
/// The M-step charges one full-support compensator per event, so each bin
/// height is `sum p_ij (pairs in bin) / (N * width)`.
pub fn fit_misd(seqs: &[EventSequence], t_phi: f64, n_bins: usize, iters: usize, exec: Exec) -> Result<MisdFit> {
    let first = seqs.first().ok_or_else(|| Error::invalid("no event sequences given"))?;
    let t_end = first.t_end();
    if seqs.iter().any(|s| s.t_end() != t_end) {
        return Err(Error::invalid("all sequences must share one observation window"));
    }
    if n_bins == 0 {
        return Err(Error::invalid("MISD needs at least one bin"));
    }
    let n: usize = seqs.iter().map(EventSequence::len).sum();
    let mut p: Vec<BranchingMatrix> = seqs.iter().map(|s| BranchingMatrix::uniform(s, t_phi)).collect();
    let mut kernel = misd_m_step(&p, seqs, t_end, t_phi, n_bins, n)?;
    let mut q_trace = Vec::with_capacity(iters);
    let mut max_row_deviation: f64 = 0.0;
    for _ in 0..iters {
        p = seqs
            .iter()
            .map(|s| update_branching(&kernel, s, exec))
            .collect::<Result<Vec<_>>>()?;
        max_row_deviation = p
            .iter()
            .map(BranchingMatrix::row_sum_deviation)
            .fold(max_row_deviation, f64::max);
        kernel = misd_m_step(&p, seqs, t_end, t_phi, n_bins, n)?;
        q_trace.push(
            seqs.iter()
                .zip(&p)
                .map(|(s, pm)| lower_bound(&kernel, s, pm, CompensatorEdge::FullSupport))
                .sum(),
        );
    }
    Ok(MisdFit {
        kernel,
        branching: p,
        q_trace,
        max_row_deviation,
    })
}

fn misd_m_step(
    p: &[BranchingMatrix],
    seqs: &[EventSequence],
    t_end: f64,
    t_phi: f64,
    n_bins: usize,
    n: usize,
) -> Result<HistogramKernel> {
    let bg: f64 = p.iter().map(BranchingMatrix::background_sum).sum();
    let mu = bg / (seqs.len() as f64 * t_end);
    let mut kernel = HistogramKernel::new(mu, t_phi, vec![0.0; n_bins])?;
    let mut mass = vec![0.0; n_bins];
    for (pm, s) in p.iter().zip(seqs) {
        let t = s.times();
        for (i, row) in pm.rows().iter().enumerate() {
            for (k, &pij) in row.parents.iter().enumerate() {
                let j = row.first_parent + k;
                mass[kernel.bin_of(t[i] - t[j])] += pij;
            }
        }
    }
    if n > 0 {
        let w = kernel.bin_width();
        kernel.heights = mass.into_iter().map(|m| m / (n as f64 * w)).collect();
    }
    Ok(kernel)
}
