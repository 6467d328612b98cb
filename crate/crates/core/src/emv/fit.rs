use super::branching::{pair_lags, update_branching, BranchingMatrix};
use super::estimate::{ComponentPosterior, HawkesModelEstimate};
use super::hyper::{update_hyperparams, HyperBounds};
use super::objective::{ComponentProblem, ComponentSpec};
use super::solver::{solve_stationary_s, FixedPointConfig, StationarySolution};
use crate::error::{Error, Result};
use crate::events::EventSequence;
use crate::exec::Exec;
use crate::gp::VariationalPosterior;
use crate::kernels::{InducingGrid, KernelParams, DEFAULT_JITTER_REL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchingInit {
    /// Uniform over the event itself and its admissible parents.
    #[default]
    Uniform,
    /// Every event attributed to the background.
    Background,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub m_f: usize,
    pub m_g: usize,
    pub t_phi: f64,
    pub max_em_iters: usize,
    /// Refresh the kernel hyperparameters at iteration 0 and every this many
    /// EM iterations after (0 disables). A converged branching matrix also
    /// triggers a refresh; the fit stops once that refresh no longer helps.
    pub hyper_update_every: usize,
    /// Nelder–Mead iteration budget per hyperparameter refresh.
    pub hyper_max_evals: u64,
    pub fixed_point: FixedPointConfig,
    pub theta_f: Option<KernelParams>,
    pub theta_g: Option<KernelParams>,
    pub seed: u64,
    pub jitter_rel: f64,
    pub toeplitz: bool,
    pub branching_init: BranchingInit,
    /// Stop once no branching probability moves by more than this.
    pub convergence_tol: f64,
    pub exec: Exec,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            m_f: 8,
            m_g: 6,
            t_phi: 6.0,
            max_em_iters: 100,
            hyper_update_every: 20,
            hyper_max_evals: 40,
            fixed_point: FixedPointConfig::default(),
            theta_f: None,
            theta_g: None,
            seed: 0,
            jitter_rel: DEFAULT_JITTER_REL,
            toeplitz: false,
            branching_init: BranchingInit::Uniform,
            convergence_tol: 1e-8,
            exec: Exec::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_f == 0 || self.m_g == 0 {
            return Err(Error::invalid("inducing counts must be positive"));
        }
        if !(self.t_phi > 0.0 && self.t_phi.is_finite()) {
            return Err(Error::invalid("T_phi must be positive"));
        }
        if !(self.convergence_tol > 0.0) || !(self.jitter_rel >= 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        self.fixed_point.validate()
    }
}

/// One EM iteration, as logged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub elbo_mu: Option<f64>,
    pub elbo_phi: f64,
    pub constant_mu: Option<f64>,
    pub theta_f: Option<KernelParams>,
    pub theta_g: KernelParams,
    /// Inner stationarity iterations spent on each component.
    pub inner_iters_mu: usize,
    pub inner_iters_phi: usize,
    /// Largest change of any branching probability in this E-step.
    pub max_change: f64,
    /// Largest `|row sum - 1|` of the new branching matrices.
    pub row_deviation: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FitTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl FitTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn max_row_deviation(&self) -> f64 {
        self.records.iter().map(|r| r.row_deviation).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: HawkesModelEstimate,
    /// One branching matrix per input sequence.
    pub branching: Vec<BranchingMatrix>,
    pub trace: FitTrace,
}

/// Algorithm 1 on a single sequence: GP baseline and GP triggering kernel.
pub fn fit(events: &EventSequence, cfg: &FitConfig) -> Result<FitOutput> {
    fit_many(std::slice::from_ref(events), cfg)
}

/// Algorithm 1 on several independent sequences sharing one window.
pub fn fit_many(seqs: &[EventSequence], cfg: &FitConfig) -> Result<FitOutput> {
    Engine::new(seqs, cfg, false)?.run(&mut |_| {})
}

/// Algorithm 2: constant baseline `mu = sum_i p_ii / T`, GP triggering kernel.
pub fn fit_const_mu(events: &EventSequence, cfg: &FitConfig) -> Result<FitOutput> {
    fit_const_mu_many(std::slice::from_ref(events), cfg)
}

pub fn fit_const_mu_many(seqs: &[EventSequence], cfg: &FitConfig) -> Result<FitOutput> {
    Engine::new(seqs, cfg, true)?.run(&mut |_| {})
}

/// Either algorithm, calling `observer` after every completed EM iteration.
/// On failure the records already observed are the partial state.
pub fn fit_observed(
    seqs: &[EventSequence],
    cfg: &FitConfig,
    constant_mu: bool,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<FitOutput> {
    Engine::new(seqs, cfg, constant_mu)?.run(observer)
}

struct Component {
    spec: ComponentSpec,
    params: KernelParams,
    problem: ComponentProblem,
    s: Vec<f64>,
    bounds: HyperBounds,
}

impl Component {
    fn new(spec: ComponentSpec, params: KernelParams) -> Result<Self> {
        let problem = spec.build(&params)?;
        let s = problem.prior.k_zz.diagonal().iter().copied().collect();
        let bounds = HyperBounds::for_domain(spec.grid.domain_length(), spec.grid.len(), params.theta0);
        Ok(Self {
            spec,
            params,
            problem,
            s,
            bounds,
        })
    }

    fn posterior(&self) -> Result<ComponentPosterior> {
        let q = VariationalPosterior::new_diag(self.spec.grid.clone(), self.s.clone())?;
        ComponentPosterior::new(self.params, q, self.spec.jitter_rel)
    }

    /// Returns true when the refresh improved the ELBO by more than a relative 1e-6.
    fn refresh_hyper(&mut self, p: &[f64], cfg: &FitConfig) -> Result<bool> {
        let mut moved = false;
        if let Some(up) = update_hyperparams(
            &self.params,
            &self.spec,
            p,
            &self.s,
            &cfg.fixed_point,
            &self.bounds,
            cfg.hyper_max_evals,
        ) {
            moved = up.elbo - up.initial_elbo > 1e-6 * up.initial_elbo.abs().max(1.0);
            if up.params != self.params {
                self.problem = self.spec.build(&up.params)?;
                self.params = up.params;
            }
            self.s = up.s;
        }
        Ok(moved)
    }

    /// Solve for `S*`; on a failed solve, re-jitter the hyperparameters a few times.
    fn solve(&mut self, p: &[f64], cfg: &FitConfig, rng: &mut ChaCha8Rng) -> Result<StationarySolution> {
        let mut last_err = None;
        for _attempt in 0..4 {
            match solve_stationary_s(&self.problem, p, &self.s, &cfg.fixed_point) {
                Ok(sol) => {
                    self.s.clone_from(&sol.s);
                    return Ok(sol);
                }
                Err(e @ Error::NoConvergence { .. }) => {
                    last_err = Some(e);
                    let jittered = KernelParams {
                        theta0: self.params.theta0 * rng.random_range(-0.2f64..0.2).exp(),
                        theta1: self.params.theta1 * rng.random_range(-0.2f64..0.2).exp(),
                    };
                    self.params = self.bounds.clamp(&jittered);
                    self.problem = self.spec.build(&self.params)?;
                    self.s = self.problem.prior.k_zz.diagonal().iter().copied().collect();
                }
                Err(e) => return Err(e),
            }
        }
        Err(last_err.expect("at least one attempt"))
    }
}

struct Engine<'a> {
    seqs: &'a [EventSequence],
    cfg: &'a FitConfig,
    t_end: f64,
    f: Option<Component>,
    g: Component,
    p: Vec<BranchingMatrix>,
}

impl<'a> Engine<'a> {
    fn new(seqs: &'a [EventSequence], cfg: &'a FitConfig, const_mu: bool) -> Result<Self> {
        cfg.validate()?;
        let first = seqs.first().ok_or_else(|| Error::invalid("no event sequences given"))?;
        let t_end = first.t_end();
        if seqs.iter().any(|s| s.t_end() != t_end) {
            return Err(Error::invalid("all sequences must share one observation window"));
        }
        let n_total: usize = seqs.iter().map(EventSequence::len).sum();
        if n_total == 0 {
            return Err(Error::invalid("need at least one event"));
        }
        let r = seqs.len() as f64;
        let t_phi = cfg.t_phi;
        let p: Vec<BranchingMatrix> = seqs
            .iter()
            .map(|s| match cfg.branching_init {
                BranchingInit::Uniform => BranchingMatrix::uniform(s, t_phi),
                BranchingInit::Background => BranchingMatrix::background_only(s, t_phi),
            })
            .collect();

        let f = if const_mu {
            None
        } else {
            let spec = ComponentSpec {
                grid: InducingGrid::uniform(cfg.m_f, t_end)?,
                weight: r,
                points: seqs.iter().flat_map(|s| s.times().iter().copied()).collect(),
                jitter_rel: cfg.jitter_rel,
                toeplitz: cfg.toeplitz,
                exec: cfg.exec,
            };
            let theta = match cfg.theta_f {
                Some(t) => t,
                None => KernelParams::new(n_total as f64 / (r * t_end), (2.0 * cfg.m_f as f64 / t_end).powi(2))?,
            };
            Some(Component::new(spec, theta)?)
        };
        let spec_g = ComponentSpec {
            grid: InducingGrid::uniform(cfg.m_g, t_phi)?,
            weight: n_total as f64,
            points: seqs.iter().flat_map(|s| pair_lags(s, t_phi)).collect(),
            jitter_rel: cfg.jitter_rel,
            toeplitz: cfg.toeplitz,
            exec: cfg.exec,
        };
        let theta_g = match cfg.theta_g {
            Some(t) => t,
            None => KernelParams::new(1.0, (2.0 * cfg.m_g as f64 / t_phi).powi(2))?,
        };
        let g = Component::new(spec_g, theta_g)?;
        Ok(Self {
            seqs,
            cfg,
            t_end,
            f,
            g,
            p,
        })
    }

    fn background_weights(&self) -> Vec<f64> {
        self.p.iter().flat_map(|m| m.background_weights()).collect()
    }

    fn pair_weights(&self) -> Vec<f64> {
        self.p.iter().flat_map(|m| m.pair_weights()).collect()
    }

    fn constant_mu(&self) -> f64 {
        let total: f64 = self.p.iter().map(BranchingMatrix::background_sum).sum();
        total / (self.seqs.len() as f64 * self.t_end)
    }

    fn assemble(&self) -> Result<HawkesModelEstimate> {
        let f = self.f.as_ref().map(Component::posterior).transpose()?;
        let c = self.f.is_none().then(|| self.constant_mu());
        HawkesModelEstimate::new(self.t_end, self.cfg.t_phi, f, self.g.posterior()?, c)
    }

    fn run(mut self, observer: &mut dyn FnMut(&IterationRecord)) -> Result<FitOutput> {
        let cfg = self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut trace = FitTrace::default();
        let mut model = self.assemble()?;
        let hyper = cfg.hyper_update_every > 0;
        let mut force_refresh = false;
        for it in 0..cfg.max_em_iters {
            let ctx = format!("EM iteration {it}");
            let w_mu = self.background_weights();
            let w_phi = self.pair_weights();
            // `None`: no refresh this iteration; `Some(moved)` otherwise
            let mut refreshed = None;
            if hyper && (it % cfg.hyper_update_every == 0 || force_refresh) {
                let mut moved = false;
                if let Some(f) = self.f.as_mut() {
                    moved |= f.refresh_hyper(&w_mu, cfg).map_err(|e| e.with_context(&ctx))?;
                }
                moved |= self.g.refresh_hyper(&w_phi, cfg).map_err(|e| e.with_context(&ctx))?;
                refreshed = Some(moved);
                force_refresh = false;
            }
            let sol_mu = match self.f.as_mut() {
                Some(f) => Some(f.solve(&w_mu, cfg, &mut rng).map_err(|e| e.with_context(&ctx))?),
                None => None,
            };
            let sol_phi = self.g.solve(&w_phi, cfg, &mut rng).map_err(|e| e.with_context(&ctx))?;
            model = self.assemble()?;

            let new_p = self
                .seqs
                .iter()
                .map(|s| update_branching(&model, s, cfg.exec))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.with_context(&ctx))?;
            let max_change = self
                .p
                .iter()
                .zip(&new_p)
                .map(|(a, b)| a.max_abs_diff(b))
                .fold(0.0, f64::max);
            let row_deviation = new_p.iter().map(BranchingMatrix::row_sum_deviation).fold(0.0, f64::max);
            self.p = new_p;
            let record = IterationRecord {
                iteration: it,
                elbo_mu: sol_mu.as_ref().map(|s| s.elbo),
                elbo_phi: sol_phi.elbo,
                constant_mu: model.constant_mu(),
                theta_f: self.f.as_ref().map(|f| f.params),
                theta_g: self.g.params,
                inner_iters_mu: sol_mu.as_ref().map_or(0, |s| s.iterations),
                inner_iters_phi: sol_phi.iterations,
                max_change,
                row_deviation,
            };
            log::debug!(
                "iter {it}: elbo_mu={:?} elbo_phi={:.6} max_change={max_change:.3e}",
                record.elbo_mu,
                record.elbo_phi
            );
            observer(&record);
            trace.records.push(record);
            if max_change <= cfg.convergence_tol {
                // a fixed point needs Theta to be stationary at the converged P as well
                if !hyper || refreshed == Some(false) {
                    trace.converged = true;
                    break;
                }
                force_refresh = true;
            }
        }
        if self.cfg.max_em_iters == 0 {
            model = self.assemble()?;
        }
        Ok(FitOutput {
            model,
            branching: self.p,
            trace,
        })
    }
}
