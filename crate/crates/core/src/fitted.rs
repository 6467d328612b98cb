//! A serialisable wrapper over every model kind the crate can produce.

use crate::baselines::{HistogramKernel, ParametricHawkesParams};
use crate::emv::HawkesModelEstimate;
use crate::model::HawkesModel;
use crate::simulate::GroundTruth;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum FittedModel {
    /// GP baseline and trigger, or constant baseline with GP trigger.
    Emv(Box<HawkesModelEstimate>),
    Parametric(ParametricHawkesParams),
    Histogram(HistogramKernel),
    Truth(GroundTruth),
}

impl FittedModel {
    fn inner(&self) -> &dyn HawkesModel {
        match self {
            FittedModel::Emv(m) => m.as_ref(),
            FittedModel::Parametric(m) => m,
            FittedModel::Histogram(m) => m,
            FittedModel::Truth(m) => m,
        }
    }

    pub fn method_name(&self) -> &'static str {
        match self {
            FittedModel::Emv(m) if m.constant_mu().is_some() => "emv-const",
            FittedModel::Emv(_) => "emv",
            FittedModel::Parametric(_) => "ph",
            FittedModel::Histogram(_) => "misd",
            FittedModel::Truth(_) => "truth",
        }
    }
}

impl From<HawkesModelEstimate> for FittedModel {
    fn from(m: HawkesModelEstimate) -> Self {
        FittedModel::Emv(Box::new(m))
    }
}

impl HawkesModel for FittedModel {
    fn baseline(&self, t: f64) -> f64 {
        self.inner().baseline(t)
    }
    fn trigger(&self, tau: f64) -> f64 {
        self.inner().trigger(tau)
    }
    fn trigger_support(&self) -> f64 {
        self.inner().trigger_support()
    }
    fn baseline_integral(&self, a: f64, b: f64) -> f64 {
        self.inner().baseline_integral(a, b)
    }
    fn trigger_integral(&self, u: f64) -> f64 {
        self.inner().trigger_integral(u)
    }
    fn baseline_bound(&self, a: f64, b: f64) -> f64 {
        self.inner().baseline_bound(a, b)
    }
    fn trigger_bound(&self, a: f64, b: f64) -> f64 {
        self.inner().trigger_bound(a, b)
    }
    fn trigger_breaks(&self) -> Vec<f64> {
        self.inner().trigger_breaks()
    }
    fn branching_ratio(&self) -> f64 {
        self.inner().branching_ratio()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::synthetic_case;

    #[test]
    fn json_round_trip_preserves_evaluation() {
        let models = [
            FittedModel::Parametric(ParametricHawkesParams::new(0.9, 0.5, 1.7).unwrap()),
            FittedModel::Histogram(HistogramKernel::new(0.4, 6.0, vec![0.3, 0.1]).unwrap()),
            FittedModel::Truth(synthetic_case(4).unwrap()),
        ];
        for m in models {
            let s = serde_json::to_string(&m).unwrap();
            let back: FittedModel = serde_json::from_str(&s).unwrap();
            for x in [0.1, 1.3, 5.9, 42.0] {
                assert_eq!(m.baseline(x), back.baseline(x));
                assert_eq!(m.trigger(x), back.trigger(x));
            }
            assert_eq!(m.method_name(), back.method_name());
        }
    }
}
