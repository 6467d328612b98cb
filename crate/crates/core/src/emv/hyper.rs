//! Type-II refresh of the kernel hyperparameters.
//!
//! The component ELBO is maximised over `(log theta0, log theta1)` inside a
//! box, re-solving the stationary `S*` at every trial point since `K_zz` and
//! `Psi` both move with the hyperparameters.

use super::objective::ComponentSpec;
use super::solver::{solve_stationary_s, FixedPointConfig};
use crate::kernels::KernelParams;
use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};

/// Box constraints on the kernel hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    pub theta0: (f64, f64),
    pub theta1: (f64, f64),
}

impl HyperBounds {
    /// Bounds for a component on `[0, domain_length]` with `m` inducing
    /// points: lengthscales between a quarter of the grid spacing and ten
    /// domain lengths.
    pub fn for_domain(domain_length: f64, m: usize, theta0_scale: f64) -> Self {
        let spacing = domain_length / (m.max(2) - 1) as f64;
        Self {
            theta0: (1e-6 * theta0_scale.max(1e-3), 1e3 * theta0_scale.max(1.0)),
            theta1: (1.0 / (10.0 * domain_length).powi(2), 4.0 / (spacing * spacing)),
        }
    }

    pub fn contains(&self, p: &KernelParams) -> bool {
        (self.theta0.0..=self.theta0.1).contains(&p.theta0) && (self.theta1.0..=self.theta1.1).contains(&p.theta1)
    }

    pub fn clamp(&self, p: &KernelParams) -> KernelParams {
        KernelParams {
            theta0: p.theta0.clamp(self.theta0.0, self.theta0.1),
            theta1: p.theta1.clamp(self.theta1.0, self.theta1.1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HyperUpdate {
    pub params: KernelParams,
    pub s: Vec<f64>,
    pub elbo: f64,
    /// ELBO at the incoming hyperparameters (with `S*` re-solved there).
    pub initial_elbo: f64,
}

struct Objective<'a> {
    spec: &'a ComponentSpec,
    p: &'a [f64],
    warm: &'a [f64],
    fp: &'a FixedPointConfig,
    bounds: HyperBounds,
}

impl Objective<'_> {
    fn solve(&self, params: &KernelParams) -> Option<(Vec<f64>, f64)> {
        let problem = self.spec.build(params).ok()?;
        let warm: Vec<f64> = if self.warm.len() == problem.m() {
            self.warm.to_vec()
        } else {
            vec![params.theta0; problem.m()]
        };
        let sol = solve_stationary_s(&problem, self.p, &warm, self.fp).ok()?;
        sol.elbo.is_finite().then_some((sol.s, sol.elbo))
    }
}

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> Result<f64, argmin::core::Error> {
        let params = KernelParams {
            theta0: x[0].exp(),
            theta1: x[1].exp(),
        };
        if !self.bounds.contains(&params) {
            return Ok(f64::INFINITY);
        }
        Ok(self.solve(&params).map_or(f64::INFINITY, |(_, e)| -e))
    }
}

/// Maximise the component ELBO over the hyperparameters. Never fails: if the
/// search does not improve on `current`, `current` is returned together with
/// its own stationary solution. Returns `None` only when even `current`
/// admits no stationary solution.
pub fn update_hyperparams(
    current: &KernelParams,
    spec: &ComponentSpec,
    p: &[f64],
    warm: &[f64],
    fp: &FixedPointConfig,
    bounds: &HyperBounds,
    max_evals: u64,
) -> Option<HyperUpdate> {
    let obj = Objective {
        spec,
        p,
        warm,
        fp,
        bounds: *bounds,
    };
    let (s0, e0) = obj.solve(current)?;
    let fallback = HyperUpdate {
        params: *current,
        s: s0,
        elbo: e0,
        initial_elbo: e0,
    };
    let start = bounds.clamp(current);
    let x0 = vec![start.theta0.ln(), start.theta1.ln()];
    let simplex = vec![x0.clone(), vec![x0[0] + 0.5, x0[1]], vec![x0[0], x0[1] + 0.7]];
    let solver = match NelderMead::new(simplex).with_sd_tolerance(1e-7) {
        Ok(s) => s,
        Err(_) => return Some(fallback),
    };
    let res = match Executor::new(obj, solver).configure(|st| st.max_iters(max_evals)).run() {
        Ok(r) => r,
        Err(_) => return Some(fallback),
    };
    let best = match res.state().get_best_param() {
        Some(b) => b.clone(),
        None => return Some(fallback),
    };
    let params = KernelParams {
        theta0: best[0].exp(),
        theta1: best[1].exp(),
    };
    let obj = Objective {
        spec,
        p,
        warm,
        fp,
        bounds: *bounds,
    };
    match obj.solve(&params) {
        Some((s, e)) if e > e0 && bounds.contains(&params) => Some(HyperUpdate {
            params,
            s,
            elbo: e,
            initial_elbo: e0,
        }),
        _ => Some(fallback),
    }
}
