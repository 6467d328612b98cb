//! Ground-truth Hawkes models and an Ogata thinning sampler.

use crate::error::{Error, Result};
use crate::events::EventSequence;
use crate::exec::{derive_seed, Exec};
use crate::model::{first_active, intensity, HawkesModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Background rate families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Baseline {
    Constant {
        rate: f64,
    },
    /// `before` on `[0, at]`, `after` beyond.
    Step {
        before: f64,
        after: f64,
        at: f64,
    },
    /// `offset + amplitude * sin(2 pi t / period)`.
    Sinusoid {
        offset: f64,
        amplitude: f64,
        period: f64,
    },
    /// `values[k]` on `[edges[k], edges[k+1])`; zero outside.
    PiecewiseConstant {
        edges: Vec<f64>,
        values: Vec<f64>,
    },
}

/// Triggering kernel families, all cut off at the truth's `t_phi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trigger {
    Zero,
    /// `alpha * exp(-beta tau)`.
    Exponential {
        alpha: f64,
        beta: f64,
    },
    /// `amplitude * sin(tau)` on `(0, pi]`, zero after.
    HalfSine {
        amplitude: f64,
    },
    /// `amplitude * (sin(2 pi tau / period) + 1) * exp(-decay tau)`.
    DampedSine {
        amplitude: f64,
        period: f64,
        decay: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub label: String,
    pub t_end: f64,
    pub t_phi: f64,
    pub baseline: Baseline,
    pub trigger: Trigger,
}

/// A validated, subcritical ground-truth model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TruthSpec", into = "TruthSpec")]
pub struct GroundTruth {
    spec: TruthSpec,
}

impl TryFrom<TruthSpec> for GroundTruth {
    type Error = Error;
    fn try_from(spec: TruthSpec) -> Result<Self> {
        GroundTruth::new(spec)
    }
}

impl From<GroundTruth> for TruthSpec {
    fn from(g: GroundTruth) -> Self {
        g.spec
    }
}

fn nonneg(x: f64) -> bool {
    x >= 0.0 && x.is_finite()
}

impl GroundTruth {
    pub fn new(spec: TruthSpec) -> Result<Self> {
        if !(spec.t_end > 0.0 && spec.t_end.is_finite()) || !(spec.t_phi > 0.0 && spec.t_phi.is_finite()) {
            return Err(Error::invalid("T and T_phi must be positive and finite"));
        }
        let base_ok = match &spec.baseline {
            Baseline::Constant { rate } => nonneg(*rate),
            Baseline::Step { before, after, at } => nonneg(*before) && nonneg(*after) && at.is_finite(),
            Baseline::Sinusoid {
                offset,
                amplitude,
                period,
            } => offset.is_finite() && *offset >= amplitude.abs() && *period > 0.0 && period.is_finite(),
            Baseline::PiecewiseConstant { edges, values } => {
                edges.len() == values.len() + 1
                    && edges.windows(2).all(|w| w[0] < w[1])
                    && edges.iter().all(|e| e.is_finite())
                    && values.iter().all(|v| nonneg(*v))
            }
        };
        if !base_ok {
            return Err(Error::invalid(format!("invalid baseline {:?}", spec.baseline)));
        }
        let trig_ok = match &spec.trigger {
            Trigger::Zero => true,
            Trigger::Exponential { alpha, beta } => nonneg(*alpha) && nonneg(*beta),
            Trigger::HalfSine { amplitude } => nonneg(*amplitude),
            Trigger::DampedSine {
                amplitude,
                period,
                decay,
            } => nonneg(*amplitude) && *period > 0.0 && period.is_finite() && nonneg(*decay),
        };
        if !trig_ok {
            return Err(Error::invalid(format!("invalid trigger {:?}", spec.trigger)));
        }
        let gt = Self { spec };
        check_subcritical(&gt)?;
        Ok(gt)
    }

    pub fn spec(&self) -> &TruthSpec {
        &self.spec
    }

    pub fn label(&self) -> &str {
        &self.spec.label
    }

    pub fn t_end(&self) -> f64 {
        self.spec.t_end
    }

    pub fn t_phi(&self) -> f64 {
        self.spec.t_phi
    }

    pub fn sample(&self, seed: u64) -> Result<EventSequence> {
        thinning_sample(self, self.spec.t_end, seed)
    }

    /// One sequence per seed, sampled concurrently under `exec`.
    pub fn sample_many(&self, seeds: &[u64], exec: Exec) -> Result<Vec<EventSequence>> {
        sample_many(self, self.spec.t_end, seeds, exec)
    }
}

/// Rejects models whose branching ratio is at least one.
pub fn check_subcritical(model: &(impl HawkesModel + ?Sized)) -> Result<()> {
    let r = model.branching_ratio();
    if r.is_finite() && r < 1.0 {
        Ok(())
    } else {
        Err(Error::SupercriticalModel { branching_ratio: r })
    }
}

impl HawkesModel for GroundTruth {
    fn baseline(&self, t: f64) -> f64 {
        match &self.spec.baseline {
            Baseline::Constant { rate } => *rate,
            Baseline::Step { before, after, at } => {
                if t <= *at {
                    *before
                } else {
                    *after
                }
            }
            Baseline::Sinusoid {
                offset,
                amplitude,
                period,
            } => (offset + amplitude * (2.0 * PI * t / period).sin()).max(0.0),
            Baseline::PiecewiseConstant { edges, values } => {
                if t < edges[0] || t >= edges[edges.len() - 1] {
                    return 0.0;
                }
                let k = edges.partition_point(|e| *e <= t) - 1;
                values[k]
            }
        }
    }

    fn trigger(&self, tau: f64) -> f64 {
        if tau <= 0.0 || tau > self.spec.t_phi {
            return 0.0;
        }
        match &self.spec.trigger {
            Trigger::Zero => 0.0,
            Trigger::Exponential { alpha, beta } => alpha * (-beta * tau).exp(),
            Trigger::HalfSine { amplitude } => {
                if tau <= PI {
                    amplitude * tau.sin()
                } else {
                    0.0
                }
            }
            Trigger::DampedSine {
                amplitude,
                period,
                decay,
            } => amplitude * ((2.0 * PI * tau / period).sin() + 1.0) * (-decay * tau).exp(),
        }
    }

    fn trigger_support(&self) -> f64 {
        self.spec.t_phi
    }

    fn baseline_integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        match &self.spec.baseline {
            Baseline::Constant { rate } => rate * (b - a),
            Baseline::Step { before, after, at } => {
                let left = (b.min(*at) - a).max(0.0);
                let right = (b - a.max(*at)).max(0.0);
                before * left + after * right
            }
            Baseline::Sinusoid {
                offset,
                amplitude,
                period,
            } => {
                let w = 2.0 * PI / period;
                offset * (b - a) + amplitude / w * ((w * a).cos() - (w * b).cos())
            }
            Baseline::PiecewiseConstant { edges, values } => edges
                .windows(2)
                .zip(values)
                .map(|(e, v)| v * (b.min(e[1]) - a.max(e[0])).max(0.0))
                .sum(),
        }
    }

    fn trigger_integral(&self, u: f64) -> f64 {
        let u = u.min(self.spec.t_phi);
        if u <= 0.0 {
            return 0.0;
        }
        match &self.spec.trigger {
            Trigger::Zero => 0.0,
            Trigger::Exponential { alpha, beta } => {
                if *beta == 0.0 {
                    alpha * u
                } else {
                    alpha / beta * -(-beta * u).exp_m1()
                }
            }
            Trigger::HalfSine { amplitude } => amplitude * (1.0 - u.min(PI).cos()),
            Trigger::DampedSine {
                amplitude,
                period,
                decay,
            } => {
                // int_0^u (sin(w s) + 1) e^{-d s} ds in closed form
                let (w, d) = (2.0 * PI / period, *decay);
                let e = (-d * u).exp();
                let sine = (w - e * (d * (w * u).sin() + w * (w * u).cos())) / (d * d + w * w);
                let flat = if d == 0.0 { u } else { -(-d * u).exp_m1() / d };
                amplitude * (sine + flat)
            }
        }
    }

    fn baseline_bound(&self, a: f64, b: f64) -> f64 {
        match &self.spec.baseline {
            Baseline::Constant { rate } => *rate,
            Baseline::Step { before, after, at } => {
                let mut m: f64 = 0.0;
                if a <= *at {
                    m = m.max(*before);
                }
                if b > *at {
                    m = m.max(*after);
                }
                m
            }
            Baseline::Sinusoid { offset, amplitude, .. } => offset + amplitude.abs(),
            Baseline::PiecewiseConstant { edges, values } => edges
                .windows(2)
                .zip(values)
                .filter(|(e, _)| e[0] <= b && e[1] > a)
                .map(|(_, v)| *v)
                .fold(0.0, f64::max),
        }
    }

    fn trigger_bound(&self, a: f64, b: f64) -> f64 {
        let lo = a.max(0.0);
        if b <= 0.0 || lo > self.spec.t_phi {
            return 0.0;
        }
        match &self.spec.trigger {
            Trigger::Zero => 0.0,
            Trigger::Exponential { alpha, beta } => alpha * (-beta * lo).exp(),
            Trigger::HalfSine { amplitude } => {
                if lo > PI {
                    0.0
                } else {
                    *amplitude
                }
            }
            Trigger::DampedSine { amplitude, decay, .. } => 2.0 * amplitude * (-decay * lo).exp(),
        }
    }
}

/// The four synthetic ground truths on `T = 100`, `T_phi = 6`.
pub fn synthetic_case(id: u8) -> Result<GroundTruth> {
    let (baseline, trigger) = match id {
        1 => (
            Baseline::Constant { rate: 1.0 },
            Trigger::Exponential { alpha: 1.0, beta: 2.0 },
        ),
        2 => (
            Baseline::Step {
                before: 1.0,
                after: 2.0,
                at: 50.0,
            },
            Trigger::Exponential { alpha: 1.0, beta: 2.0 },
        ),
        3 => (Baseline::Constant { rate: 1.0 }, Trigger::HalfSine { amplitude: 0.25 }),
        4 => (
            Baseline::Sinusoid {
                offset: 1.0,
                amplitude: 1.0,
                period: 100.0,
            },
            Trigger::DampedSine {
                amplitude: 0.3,
                period: 3.0,
                decay: 0.7,
            },
        ),
        _ => return Err(Error::invalid(format!("unknown synthetic case {id}; expected 1..=4"))),
    };
    GroundTruth::new(TruthSpec {
        label: format!("case{id}"),
        t_end: 100.0,
        t_phi: 6.0,
        baseline,
        trigger,
    })
}

/// Upper bound on the conditional intensity over `[a, b]` given `history` (all before `a`).
fn local_bound(model: &(impl HawkesModel + ?Sized), history: &[f64], a: f64, b: f64) -> f64 {
    let start = first_active(model, history, a);
    model.baseline_bound(a, b)
        + history[start..]
            .iter()
            .map(|&tj| model.trigger_bound(a - tj, b - tj))
            .sum::<f64>()
}

fn lookahead(model: &(impl HawkesModel + ?Sized)) -> f64 {
    let s = model.trigger_support();
    if s.is_finite() && s > 0.0 {
        s.clamp(1e-3, 10.0)
    } else {
        10.0
    }
}

/// Next event strictly after `t0` and before `horizon`, given `history`
/// (all events up to `t0`). Returns `None` if no event occurs before `horizon`.
///
/// The dominating rate is a local bound over `[t, t + delta]`; if an
/// evaluated intensity ever exceeds it, `delta` is halved and the window redrawn.
pub fn next_event<R: Rng + ?Sized>(
    model: &(impl HawkesModel + ?Sized),
    history: &[f64],
    t0: f64,
    horizon: f64,
    rng: &mut R,
) -> Option<f64> {
    let delta0 = lookahead(model);
    let mut delta = delta0;
    let mut t = t0;
    while t < horizon {
        let hi = (t + delta).min(horizon);
        let bound = local_bound(model, history, t, hi);
        if !(bound > 0.0) || !bound.is_finite() {
            t = hi;
            delta = (2.0 * delta).min(delta0);
            continue;
        }
        let u: f64 = rng.random();
        let cand = t - (1.0 - u).ln() / bound;
        if cand >= hi {
            t = hi;
            delta = (2.0 * delta).min(delta0);
            continue;
        }
        let lam = intensity(model, history, cand);
        if lam > bound * (1.0 + 1e-12) && delta > 1e-9 {
            log::trace!("thinning bound violated at {cand}: {lam} > {bound}");
            delta *= 0.5;
            continue;
        }
        t = cand;
        let v: f64 = rng.random();
        if v * bound <= lam {
            return Some(t);
        }
    }
    None
}

/// Ogata thinning on `[0, t_end]`.
pub fn thinning_sample(model: &(impl HawkesModel + ?Sized), t_end: f64, seed: u64) -> Result<EventSequence> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::invalid("t_end must be positive and finite"));
    }
    check_subcritical(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times = Vec::new();
    let mut t = 0.0;
    while let Some(next) = next_event(model, &times, t, t_end, &mut rng) {
        // ties at double precision are vanishingly rare; nudge to keep order strict
        let next = if times.last().is_some_and(|&l| next <= l) {
            f64::from_bits(t.to_bits() + 1)
        } else {
            next
        };
        if next > t_end {
            break;
        }
        times.push(next);
        t = next;
    }
    EventSequence::new(times, t_end)
}

/// One sequence per seed; each seed drives its own stream so the output is
/// independent of the execution policy.
pub fn sample_many(
    model: &(impl HawkesModel + ?Sized),
    t_end: f64,
    seeds: &[u64],
    exec: Exec,
) -> Result<Vec<EventSequence>> {
    exec.map_range(seeds.len(), |i| thinning_sample(model, t_end, seeds[i]))
        .into_iter()
        .collect()
}

/// `n` sequences with seeds derived from `(base_seed, i)`.
pub fn sample_replicates(
    model: &(impl HawkesModel + ?Sized),
    t_end: f64,
    base_seed: u64,
    n: usize,
    exec: Exec,
) -> Result<Vec<EventSequence>> {
    let seeds: Vec<u64> = (0..n as u64).map(|i| derive_seed(base_seed, i)).collect();
    sample_many(model, t_end, &seeds, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PoissonModel;
    use crate::quad::{integrate, QuadTol};

    const TIGHT: QuadTol = QuadTol {
        abs: 1e-12,
        rel: 1e-12,
        max_intervals: 4000,
    };

    #[test]
    fn case_definitions() {
        let c1 = synthetic_case(1).unwrap();
        assert!((c1.trigger(3.0) - (-6.0f64).exp()).abs() < 1e-15);
        let c3 = synthetic_case(3).unwrap();
        assert!((c3.trigger(PI / 2.0) - 0.25).abs() < 1e-15);
        assert_eq!(c3.trigger(4.0), 0.0);
        let c2 = synthetic_case(2).unwrap();
        assert_eq!(c2.baseline(50.0), 1.0);
        assert_eq!(c2.baseline(50.0 + 1e-9), 2.0);
        assert!(synthetic_case(5).is_err());
        for id in 1..=4 {
            let c = synthetic_case(id).unwrap();
            assert_eq!(c.t_end(), 100.0);
            assert_eq!(c.t_phi(), 6.0);
            assert_eq!(c.trigger(6.5), 0.0);
        }
    }

    #[test]
    fn analytic_integrals_match_quadrature() {
        for id in 1..=4 {
            let c = synthetic_case(id).unwrap();
            for (a, b) in [(0.0, 100.0), (13.2, 71.9), (49.0, 51.0)] {
                let q = integrate(|t| c.baseline(t), a, b, TIGHT).value;
                assert!((c.baseline_integral(a, b) - q).abs() < 1e-8, "case {id} mu [{a},{b}]");
            }
            for u in [0.3, 2.0, PI, 6.0, 9.0] {
                let q = integrate(|s| c.trigger(s), 0.0, u.min(6.0), TIGHT).value;
                assert!((c.trigger_integral(u) - q).abs() < 1e-9, "case {id} phi {u}");
            }
        }
    }

    #[test]
    fn bounds_dominate() {
        for id in 1..=4 {
            let c = synthetic_case(id).unwrap();
            for k in 0..200 {
                let a = k as f64 * 0.5;
                let b = a + 0.7;
                let bm = c.baseline_bound(a, b);
                let bt = c.trigger_bound(a * 0.03, b * 0.03);
                for j in 0..=20 {
                    let t = a + (b - a) * j as f64 / 20.0;
                    assert!(c.baseline(t) <= bm + 1e-12);
                    let s = a * 0.03 + (b - a) * 0.03 * j as f64 / 20.0;
                    assert!(c.trigger(s) <= bt + 1e-12);
                }
            }
        }
    }

    #[test]
    fn supercritical_rejected() {
        let spec = TruthSpec {
            label: "hot".into(),
            t_end: 10.0,
            t_phi: 6.0,
            baseline: Baseline::Constant { rate: 1.0 },
            trigger: Trigger::Exponential { alpha: 3.0, beta: 1.0 },
        };
        assert!(matches!(GroundTruth::new(spec), Err(Error::SupercriticalModel { .. })));
    }

    #[test]
    fn zero_baseline_gives_empty_sequence() {
        let spec = TruthSpec {
            label: "silent".into(),
            t_end: 50.0,
            t_phi: 6.0,
            baseline: Baseline::Constant { rate: 0.0 },
            trigger: Trigger::Exponential { alpha: 0.5, beta: 1.0 },
        };
        let gt = GroundTruth::new(spec).unwrap();
        assert!(gt.sample(3).unwrap().is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        let c = synthetic_case(4).unwrap();
        assert_eq!(c.sample(7).unwrap(), c.sample(7).unwrap());
        assert_ne!(c.sample(7).unwrap(), c.sample(8).unwrap());
        let seeds = [1, 2, 3, 4];
        let par = c.sample_many(&seeds, Exec::Parallel).unwrap();
        let seq = c.sample_many(&seeds, Exec::Sequential).unwrap();
        assert_eq!(par, seq);
    }

    #[test]
    fn poisson_count_is_calibrated() {
        let seqs = sample_replicates(&PoissonModel { rate: 1.0 }, 100.0, 42, 200, Exec::Parallel).unwrap();
        let mean = seqs.iter().map(|s| s.len() as f64).sum::<f64>() / 200.0;
        assert!((mean - 100.0).abs() <= 3.0, "{mean}");
    }

    #[test]
    fn spec_round_trips_through_json() {
        let c = synthetic_case(2).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        let back: GroundTruth = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let bad = s.replace("\"before\":1.0", "\"before\":-1.0");
        assert!(serde_json::from_str::<GroundTruth>(&bad).is_err());
    }
}
