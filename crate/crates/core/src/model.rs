//! The common interface shared by fitted models, baselines and ground truths.

use crate::quad::{integrate, QuadTol};

/// A univariate Hawkes process `lambda(t) = mu(t) + sum_{t_j < t} phi(t - t_j)`.
pub trait HawkesModel: Sync {
    fn baseline(&self, t: f64) -> f64;

    /// Triggering kernel; zero for `tau <= 0` and `tau > trigger_support()`.
    fn trigger(&self, tau: f64) -> f64;

    /// Support of the triggering kernel (may be infinite).
    fn trigger_support(&self) -> f64;

    /// `int_a^b mu(t) dt`.
    fn baseline_integral(&self, a: f64, b: f64) -> f64 {
        integrate(|t| self.baseline(t), a, b, quad_tol()).value
    }

    /// `int_0^u phi(tau) dtau`, with `u` clipped to the support.
    fn trigger_integral(&self, u: f64) -> f64 {
        let u = u.min(self.trigger_support());
        if u <= 0.0 {
            return 0.0;
        }
        integrate(|s| self.trigger(s), 0.0, u, quad_tol()).value
    }

    /// Upper bound on `mu` over `[a, b]`, used by thinning.
    fn baseline_bound(&self, a: f64, b: f64) -> f64 {
        sampled_upper_bound(|t| self.baseline(t), a, b)
    }

    /// Upper bound on `phi` over `[a, b]`.
    fn trigger_bound(&self, a: f64, b: f64) -> f64 {
        let hi = b.min(self.trigger_support());
        let lo = a.max(0.0);
        if hi < lo {
            return 0.0;
        }
        sampled_upper_bound(|s| self.trigger(s), lo, hi)
    }

    /// Lags inside the support where `phi` jumps; quadrature splits there.
    fn trigger_breaks(&self) -> Vec<f64> {
        Vec::new()
    }

    /// `int_0^u phi` for the full support.
    fn branching_ratio(&self) -> f64 {
        self.trigger_integral(self.trigger_support())
    }
}

pub(crate) fn quad_tol() -> QuadTol {
    QuadTol {
        abs: 1e-11,
        rel: 1e-11,
        max_intervals: 2000,
    }
}

/// Max over 33 equispaced samples, inflated by 10%. Thinning detects and
/// recovers from the rare case where this under-estimates the supremum.
pub fn sampled_upper_bound<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    const N: usize = 33;
    let mut m: f64 = 0.0;
    for i in 0..N {
        let t = a + (b - a) * i as f64 / (N - 1) as f64;
        m = m.max(f(t));
    }
    1.1 * m
}

/// How the triggering compensator treats events whose support window
/// extends past the end of the observation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompensatorEdge {
    /// `int_{t_j}^{min(T, t_j + T_phi)} phi`: the exact integral of `lambda` over `[0, T]`.
    Truncated,
    /// `int_0^{T_phi} phi` for every event, regardless of `T`.
    FullSupport,
}

/// Index of the first event that can still excite time `t`.
pub(crate) fn first_active(model: &(impl HawkesModel + ?Sized), history: &[f64], t: f64) -> usize {
    let s = model.trigger_support();
    if s.is_finite() {
        history.partition_point(|&tj| t - tj > s)
    } else {
        0
    }
}

/// Conditional intensity at `t` given all events in `history` strictly before `t`.
pub fn intensity(model: &(impl HawkesModel + ?Sized), history: &[f64], t: f64) -> f64 {
    let end = history.partition_point(|&tj| tj < t);
    let start = first_active(model, &history[..end], t);
    model.baseline(t) + history[start..end].iter().map(|&tj| model.trigger(t - tj)).sum::<f64>()
}

/// `Lambda(t_end) = int_0^{t_end} lambda`, using the model's integrals.
pub fn compensator(model: &(impl HawkesModel + ?Sized), times: &[f64], t_end: f64, edge: CompensatorEdge) -> f64 {
    let base = model.baseline_integral(0.0, t_end);
    let s = model.trigger_support();
    let full = match edge {
        CompensatorEdge::FullSupport => Some(model.trigger_integral(s)),
        CompensatorEdge::Truncated => None,
    };
    let trig: f64 = times
        .iter()
        .filter(|&&tj| tj <= t_end)
        .map(|&tj| match full {
            Some(v) => v,
            None => model.trigger_integral((t_end - tj).min(s)),
        })
        .sum();
    base + trig
}

/// A homogeneous Poisson process, mostly useful in tests.
#[derive(Debug, Clone, Copy)]
pub struct PoissonModel {
    pub rate: f64,
}

impl HawkesModel for PoissonModel {
    fn baseline(&self, _t: f64) -> f64 {
        self.rate
    }
    fn trigger(&self, _tau: f64) -> f64 {
        0.0
    }
    fn trigger_support(&self) -> f64 {
        0.0
    }
    fn baseline_integral(&self, a: f64, b: f64) -> f64 {
        self.rate * (b - a)
    }
    fn trigger_integral(&self, _u: f64) -> f64 {
        0.0
    }
    fn baseline_bound(&self, _a: f64, _b: f64) -> f64 {
        self.rate
    }
    fn trigger_bound(&self, _a: f64, _b: f64) -> f64 {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Expo;
    impl HawkesModel for Expo {
        fn baseline(&self, _t: f64) -> f64 {
            0.5
        }
        fn trigger(&self, tau: f64) -> f64 {
            if tau > 0.0 && tau <= 2.0 {
                (-tau).exp()
            } else {
                0.0
            }
        }
        fn trigger_support(&self) -> f64 {
            2.0
        }
    }

    #[test]
    fn intensity_uses_only_active_past() {
        let h = [0.5, 1.0, 3.0];
        let l = intensity(&Expo, &h, 2.0);
        let expect = 0.5 + (-1.5f64).exp() + (-1.0f64).exp();
        assert!((l - expect).abs() < 1e-14);
        // the event at 3.0 is in the future; 0.5 is out of support at 2.6
        let l = intensity(&Expo, &h, 2.6);
        assert!((l - (0.5 + (-1.6f64).exp())).abs() < 1e-14);
    }

    #[test]
    fn compensator_edges() {
        let h = [1.0, 9.5];
        let trunc = compensator(&Expo, &h, 10.0, CompensatorEdge::Truncated);
        let full = compensator(&Expo, &h, 10.0, CompensatorEdge::FullSupport);
        let phi_int = |u: f64| 1.0 - (-u).exp();
        assert!((trunc - (5.0 + phi_int(2.0) + phi_int(0.5))).abs() < 1e-9);
        assert!((full - (5.0 + 2.0 * phi_int(2.0))).abs() < 1e-9);
    }
}
