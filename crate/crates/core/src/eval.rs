//! Metrics: log-likelihood, integrated squared error, time rescaling with a
//! KS uniformity test, Q-Q data and Monte Carlo next-event prediction.

use crate::error::{Error, Result};
use crate::events::EventSequence;
use crate::exec::{derive_seed, Exec};
use crate::model::{compensator, first_active, intensity, quad_tol, CompensatorEdge, HawkesModel};
use crate::quad::{integrate, integrate_with_breaks, QuadTol};
use crate::simulate::next_event;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// `sum_i log lambda(t_i) - int_0^T lambda`, with the exact compensator.
pub fn loglik(model: &(impl HawkesModel + ?Sized), events: &EventSequence) -> Result<f64> {
    loglik_with_edge(model, events, CompensatorEdge::Truncated)
}

/// As [`loglik`], choosing how offspring windows crossing `T` are charged.
pub fn loglik_with_edge(
    model: &(impl HawkesModel + ?Sized),
    events: &EventSequence,
    edge: CompensatorEdge,
) -> Result<f64> {
    let t = events.times();
    let mut acc = 0.0;
    for (i, &ti) in t.iter().enumerate() {
        let lam = intensity(model, t, ti);
        if !(lam > 0.0) || !lam.is_finite() {
            return Err(Error::DegenerateIntensity { index: i, time: ti });
        }
        acc += lam.ln();
    }
    Ok(acc - compensator(model, t, events.t_end(), edge))
}

/// Log-likelihood summed over independent sequences.
pub fn loglik_many(model: &(impl HawkesModel + ?Sized), seqs: &[EventSequence], exec: Exec) -> Result<f64> {
    exec.map_range(seqs.len(), |i| loglik(model, &seqs[i]))
        .into_iter()
        .sum()
}

/// `int_0^T lambda` by adaptive quadrature, split at every kink of the
/// intensity (events, the ends of their support windows and any declared
/// jumps of the triggering kernel).
pub fn compensator_by_quadrature(model: &(impl HawkesModel + ?Sized), events: &EventSequence, tol: QuadTol) -> f64 {
    let t_end = events.t_end();
    let s = model.trigger_support();
    let kinks = model.trigger_breaks();
    let mut breaks = vec![0.0, t_end];
    for &tj in events.times() {
        breaks.push(tj);
        if s.is_finite() && tj + s < t_end {
            breaks.push(tj + s);
        }
        breaks.extend(kinks.iter().map(|k| tj + k).filter(|&x| x < t_end));
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let t = events.times();
    integrate_with_breaks(|x| intensity(model, t, x), &breaks, tol).value
}

/// `int_a^b (est - truth)^2`.
pub fn est_err(est: impl Fn(f64) -> f64, truth: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let tol = QuadTol {
        abs: 1e-8,
        rel: 1e-10,
        max_intervals: 20_000,
    };
    integrate(|x| (est(x) - truth(x)).powi(2), a, b, tol).value
}

/// Compensator increments `tau_i = Lambda(t_i) - Lambda(t_{i-1})` and their
/// uniform transforms `z_i = 1 - exp(-tau_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledSequence {
    pub tau: Vec<f64>,
    pub z: Vec<f64>,
}

pub fn rescale(model: &(impl HawkesModel + ?Sized), events: &EventSequence) -> RescaledSequence {
    let t = events.times();
    let s = model.trigger_support();
    let mut tau = Vec::with_capacity(t.len());
    let mut prev = 0.0;
    for (i, &ti) in t.iter().enumerate() {
        let mut inc = model.baseline_integral(prev, ti);
        // parents old enough to be past their support at `prev` contribute nothing new
        let start = first_active(model, &t[..i], prev);
        for &tj in &t[start..i] {
            let hi = (ti - tj).min(s);
            let lo = (prev - tj).max(0.0);
            if hi > lo {
                inc += model.trigger_integral(hi) - model.trigger_integral(lo);
            }
        }
        tau.push(inc.max(0.0));
        prev = ti;
    }
    let z = tau
        .iter()
        .map(|&x| (-(-x).exp_m1()).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
        .collect();
    RescaledSequence { tau, z }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample KS test against Uniform(0, 1) with the exact finite-sample
/// null distribution.
pub fn ks_uniform(samples: &[f64]) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(Error::invalid("KS test needs at least one sample"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("KS samples must be finite"));
    }
    let mut z = samples.to_vec();
    z.sort_by(f64::total_cmp);
    let n = z.len();
    let nf = n as f64;
    let d = z
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / nf - x).max(x - i as f64 / nf)
        })
        .fold(0.0, f64::max);
    let p = (1.0 - kolmogorov_cdf(n, d)).clamp(0.0, 1.0);
    Ok(KsResult {
        statistic: d,
        p_value: p,
        n,
    })
}

/// `P(D_n < d)` (Marsaglia, Tsang and Wang, 2003).
pub fn kolmogorov_cdf(n: usize, d: f64) -> f64 {
    if d <= 0.0 {
        return 0.0;
    }
    if d >= 1.0 {
        return 1.0;
    }
    let nf = n as f64;
    let s = d * d * nf;
    if s > 7.24 || (s > 3.76 && n > 99) {
        return 1.0 - 2.0 * (-(2.000071 + 0.331 / nf.sqrt() + 1.409 / nf) * s).exp();
    }
    let k = (nf * d) as usize + 1;
    let m = 2 * k - 1;
    let h = k as f64 - nf * d;
    let mut hm = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            if i + 1 >= j {
                hm[(i, j)] = 1.0;
            }
        }
    }
    for i in 0..m {
        hm[(i, 0)] -= h.powi(i as i32 + 1);
        hm[(m - 1, i)] -= h.powi((m - i) as i32);
    }
    if 2.0 * h - 1.0 > 0.0 {
        hm[(m - 1, 0)] += (2.0 * h - 1.0).powi(m as i32);
    }
    for i in 0..m {
        for j in 0..m {
            if i + 1 > j {
                for g in 1..=(i + 1 - j) {
                    hm[(i, j)] /= g as f64;
                }
            }
        }
    }
    let (q, mut e) = matrix_power_scaled(&hm, n);
    let mut s = q[(k - 1, k - 1)];
    for i in 1..=n {
        s *= i as f64 / nf;
        if s < 1e-140 {
            s *= 1e140;
            e -= 140;
        }
    }
    s * 10f64.powi(e)
}

/// `A^n` as `(Q, e)` with `A^n = Q * 10^e`, keeping the centre entry in range.
fn matrix_power_scaled(a: &DMatrix<f64>, n: usize) -> (DMatrix<f64>, i32) {
    if n == 1 {
        return (a.clone(), 0);
    }
    let c = a.nrows() / 2;
    let (half, e) = matrix_power_scaled(a, n / 2);
    let mut b = &half * &half;
    let mut e = 2 * e;
    if n % 2 == 1 {
        b = a * b;
    }
    if b[(c, c)] > 1e140 {
        b *= 1e-140;
        e += 140;
    }
    (b, e)
}

/// `(uniform quantile, empirical quantile)` pairs for a Q-Q plot of `z`.
pub fn qq_points(z: &[f64]) -> Vec<(f64, f64)> {
    let mut s = z.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.into_iter()
        .enumerate()
        .map(|(i, v)| ((i as f64 + 0.5) / n, v))
        .collect()
}

/// Two-column CSV with header `theoretical,empirical`.
pub fn qq_csv(z: &[f64]) -> String {
    let mut out = String::from("theoretical,empirical\n");
    for (a, b) in qq_points(z) {
        out.push_str(&format!("{a},{b}\n"));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub std_err: f64,
    pub n_mc: usize,
}

/// How far past the last event a sampled waiting time may run before it is
/// censored at the horizon.
const PREDICTION_HORIZON: f64 = 1e4;

/// Monte Carlo estimate of the expected next event time after the last event
/// of `history`, sampling the waiting time by thinning.
pub fn predict_next(
    model: &(impl HawkesModel + ?Sized),
    history: &[f64],
    n_mc: usize,
    seed: u64,
    exec: Exec,
) -> Result<Prediction> {
    let &last = history
        .last()
        .ok_or_else(|| Error::invalid("prediction needs a nonempty history"))?;
    if n_mc == 0 {
        return Err(Error::invalid("n_mc must be positive"));
    }
    let horizon = last + PREDICTION_HORIZON;
    let draws = exec.map_range(n_mc, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
        next_event(model, history, last, horizon, &mut rng).unwrap_or(horizon)
    });
    let nf = n_mc as f64;
    let mean = draws.iter().sum::<f64>() / nf;
    let var = if n_mc > 1 {
        draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)
    } else {
        0.0
    };
    Ok(Prediction {
        mean,
        std_err: (var / nf).sqrt(),
        n_mc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    /// Index of the first predicted event.
    pub first_index: usize,
    pub predictions: Vec<f64>,
    pub actual: Vec<f64>,
    pub hits: Vec<bool>,
    pub pre_acc: f64,
    pub epsilon: f64,
    pub n_mc: usize,
}

pub const DEFAULT_WARMUP_FRAC: f64 = 0.17;
pub const DEFAULT_N_MC: usize = 500;

/// One-step-ahead prediction accuracy: after observing the first
/// `warmup_frac` of the events, predict each following event from all real
/// events before it and count a hit when `|prediction - actual| <= epsilon`.
pub fn pre_acc(
    model: &(impl HawkesModel + ?Sized),
    events: &EventSequence,
    epsilon: f64,
    warmup_frac: f64,
    n_mc: usize,
    seed: u64,
    exec: Exec,
) -> Result<PredictionReport> {
    if !(warmup_frac > 0.0 && warmup_frac < 1.0) {
        return Err(Error::invalid("warmup fraction must lie in (0, 1)"));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::invalid("epsilon must be nonnegative"));
    }
    let t = events.times();
    let first = ((warmup_frac * t.len() as f64).ceil() as usize).max(1);
    if first >= t.len() {
        return Err(Error::invalid("no events left to predict after the warm-up"));
    }
    let preds = exec.map_range(t.len() - first, |k| {
        let i = first + k;
        predict_next(model, &t[..i], n_mc, derive_seed(seed, i as u64), Exec::Sequential).map(|p| p.mean)
    });
    let predictions = preds.into_iter().collect::<Result<Vec<_>>>()?;
    let actual = t[first..].to_vec();
    let hits: Vec<bool> = predictions
        .iter()
        .zip(&actual)
        .map(|(p, a)| (p - a).abs() <= epsilon)
        .collect();
    let pre_acc = hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64;
    Ok(PredictionReport {
        first_index: first,
        predictions,
        actual,
        hits,
        pre_acc,
        epsilon,
        n_mc,
    })
}

/// Curve of `f` on `resolution` equispaced points of `[a, b]`.
pub fn sample_curve(f: impl Fn(f64) -> f64, a: f64, b: f64, resolution: usize) -> Vec<(f64, f64)> {
    let n = resolution.max(2);
    (0..n)
        .map(|i| {
            let x = a + (b - a) * i as f64 / (n - 1) as f64;
            (x, f(x))
        })
        .collect()
}

/// Tight quadrature tolerance for cross-checks.
pub fn oracle_tol() -> QuadTol {
    QuadTol {
        max_intervals: 20_000,
        ..quad_tol()
    }
}
