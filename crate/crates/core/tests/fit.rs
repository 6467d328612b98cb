use hawkes_emv::emv::{fit, fit_const_mu, FitConfig};
use hawkes_emv::simulate::synthetic_case;
use hawkes_emv::{Exec, FittedModel, HawkesModel};

fn config(exec: Exec) -> FitConfig {
    FitConfig {
        max_em_iters: 25,
        exec,
        ..FitConfig::default()
    }
}

#[test]
fn fits_are_identical_across_execution_policies() {
    let seq = synthetic_case(2).unwrap().sample(5).unwrap();
    let a = fit(&seq, &config(Exec::Sequential)).unwrap();
    let b = fit(&seq, &config(Exec::Parallel)).unwrap();
    assert_eq!(a.trace.iterations(), b.trace.iterations());
    for (ra, rb) in a.trace.records.iter().zip(&b.trace.records) {
        assert_eq!(ra.elbo_phi.to_bits(), rb.elbo_phi.to_bits());
        assert_eq!(ra.elbo_mu.map(f64::to_bits), rb.elbo_mu.map(f64::to_bits));
    }
    for k in 0..=200 {
        let t = k as f64 * 0.5;
        assert_eq!(a.model.baseline(t).to_bits(), b.model.baseline(t).to_bits());
        let tau = k as f64 * 0.03;
        assert_eq!(a.model.trigger(tau).to_bits(), b.model.trigger(tau).to_bits());
    }
}

#[test]
fn fitted_models_round_trip_through_json() {
    let seq = synthetic_case(1).unwrap().sample(9).unwrap();
    for out in [
        fit(&seq, &config(Exec::Parallel)).unwrap(),
        fit_const_mu(&seq, &config(Exec::Parallel)).unwrap(),
    ] {
        let model = FittedModel::from(out.model);
        let text = serde_json::to_string(&model).unwrap();
        let back: FittedModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back.method_name(), model.method_name());
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
        for k in 0..=100 {
            let (t, tau) = (k as f64, k as f64 * 0.06);
            assert_eq!(back.baseline(t).to_bits(), model.baseline(t).to_bits());
            assert_eq!(back.trigger(tau).to_bits(), model.trigger(tau).to_bits());
            assert_eq!(
                back.trigger_integral(tau).to_bits(),
                model.trigger_integral(tau).to_bits()
            );
        }
    }
}

#[test]
fn fit_keeps_branching_rows_normalised() {
    let seq = synthetic_case(4).unwrap().sample(3).unwrap();
    let out = fit(&seq, &config(Exec::Parallel)).unwrap();
    assert!(out.trace.max_row_deviation() <= 1e-12);
    assert_eq!(out.branching.len(), 1);
    assert_eq!(out.branching[0].len(), seq.len());
}
