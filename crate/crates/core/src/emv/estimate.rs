use crate::error::{Error, Result};
use crate::gp::{posterior_moments_with, PosteriorMoments, PriorFactor, VariationalPosterior};
use crate::kernels::{InducingGrid, KernelParams, DEFAULT_JITTER_REL};
use crate::model::HawkesModel;
use serde::{Deserialize, Serialize};

/// A fitted GP component: hyperparameters, `q(u)` and the cached moment evaluators.
#[derive(Debug, Clone)]
pub struct ComponentPosterior {
    pub params: KernelParams,
    pub posterior: VariationalPosterior,
    pub jitter_rel: f64,
    moments: PosteriorMoments,
}

impl ComponentPosterior {
    pub fn new(params: KernelParams, posterior: VariationalPosterior, jitter_rel: f64) -> Result<Self> {
        posterior.validate()?;
        let prior = PriorFactor::new(&params, &posterior.grid, jitter_rel * params.theta0)?;
        let moments = posterior_moments_with(&posterior, &prior);
        Ok(Self {
            params,
            posterior,
            jitter_rel,
            moments,
        })
    }

    pub fn moments(&self) -> &PosteriorMoments {
        &self.moments
    }

    /// `E[f(x)^2]`: the squared-GP intensity at `x`.
    pub fn value(&self, x: f64) -> f64 {
        self.moments.second_moment_at(x)
    }

    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.moments.second_moment_integral(a, b)
    }
}

/// `mu(t) = E_q[f(t)]^2 + Var_q[f(t)]` and `phi(tau)` likewise from `g`,
/// or a constant `mu` when fitted with the constant-baseline algorithm.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "EstimateFile", try_from = "EstimateFile")]
pub struct HawkesModelEstimate {
    t_end: f64,
    t_phi: f64,
    f: Option<ComponentPosterior>,
    g: ComponentPosterior,
    constant_mu: Option<f64>,
}

impl HawkesModelEstimate {
    pub fn new(
        t_end: f64,
        t_phi: f64,
        f: Option<ComponentPosterior>,
        g: ComponentPosterior,
        constant_mu: Option<f64>,
    ) -> Result<Self> {
        if !(t_end > 0.0 && t_phi > 0.0) {
            return Err(Error::invalid("T and T_phi must be positive"));
        }
        match (&f, constant_mu) {
            (None, None) => {
                return Err(Error::invalid(
                    "model needs either a baseline GP or a constant baseline",
                ))
            }
            (_, Some(c)) if !(c >= 0.0 && c.is_finite()) => {
                return Err(Error::invalid("constant baseline must be nonnegative"))
            }
            _ => {}
        }
        Ok(Self {
            t_end,
            t_phi,
            f,
            g,
            constant_mu,
        })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn t_phi(&self) -> f64 {
        self.t_phi
    }

    pub fn f_posterior(&self) -> Option<&ComponentPosterior> {
        self.f.as_ref()
    }

    pub fn g_posterior(&self) -> &ComponentPosterior {
        &self.g
    }

    pub fn constant_mu(&self) -> Option<f64> {
        self.constant_mu
    }

    pub fn mu_at(&self, t: f64) -> f64 {
        match (self.constant_mu, &self.f) {
            (Some(c), _) => c,
            (None, Some(f)) => f.value(t),
            (None, None) => unreachable!("validated at construction"),
        }
    }

    pub fn phi_at(&self, tau: f64) -> f64 {
        if (0.0..=self.t_phi).contains(&tau) {
            self.g.value(tau)
        } else {
            0.0
        }
    }
}

impl HawkesModel for HawkesModelEstimate {
    fn baseline(&self, t: f64) -> f64 {
        self.mu_at(t)
    }

    fn trigger(&self, tau: f64) -> f64 {
        self.phi_at(tau)
    }

    fn trigger_support(&self) -> f64 {
        self.t_phi
    }

    fn baseline_integral(&self, a: f64, b: f64) -> f64 {
        match (self.constant_mu, &self.f) {
            (Some(c), _) => c * (b - a),
            (None, Some(f)) => f.integral(a, b),
            (None, None) => unreachable!("validated at construction"),
        }
    }

    fn trigger_integral(&self, u: f64) -> f64 {
        self.g.integral(0.0, u.min(self.t_phi))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ComponentFile {
    theta0: f64,
    theta1: f64,
    inducing_points: Vec<f64>,
    domain_length: f64,
    mean: Vec<f64>,
    cov_diag: Vec<f64>,
    jitter_rel: f64,
}

/// On-disk form of [`HawkesModelEstimate`]; floats are written in shortest
/// round-trip form so the evaluators rebuild bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct EstimateFile {
    t_end: f64,
    t_phi: f64,
    constant_mu: Option<f64>,
    f: Option<ComponentFile>,
    g: ComponentFile,
}

impl From<&ComponentPosterior> for ComponentFile {
    fn from(c: &ComponentPosterior) -> Self {
        Self {
            theta0: c.params.theta0,
            theta1: c.params.theta1,
            inducing_points: c.posterior.grid.points().to_vec(),
            domain_length: c.posterior.grid.domain_length(),
            mean: c.posterior.mean.clone(),
            cov_diag: c.posterior.cov_diag.clone(),
            jitter_rel: c.jitter_rel,
        }
    }
}

impl TryFrom<ComponentFile> for ComponentPosterior {
    type Error = Error;
    fn try_from(c: ComponentFile) -> Result<Self> {
        let grid = InducingGrid::new(c.inducing_points, c.domain_length)?;
        let q = VariationalPosterior::new_diag(grid, c.cov_diag)?.with_mean(c.mean)?;
        let jitter = if c.jitter_rel > 0.0 {
            c.jitter_rel
        } else {
            DEFAULT_JITTER_REL
        };
        ComponentPosterior::new(KernelParams::new(c.theta0, c.theta1)?, q, jitter)
    }
}

impl From<HawkesModelEstimate> for EstimateFile {
    fn from(m: HawkesModelEstimate) -> Self {
        Self {
            t_end: m.t_end,
            t_phi: m.t_phi,
            constant_mu: m.constant_mu,
            f: m.f.as_ref().map(ComponentFile::from),
            g: ComponentFile::from(&m.g),
        }
    }
}

impl TryFrom<EstimateFile> for HawkesModelEstimate {
    type Error = Error;
    fn try_from(f: EstimateFile) -> Result<Self> {
        let fc = f.f.map(ComponentPosterior::try_from).transpose()?;
        HawkesModelEstimate::new(f.t_end, f.t_phi, fc, ComponentPosterior::try_from(f.g)?, f.constant_mu)
    }
}
