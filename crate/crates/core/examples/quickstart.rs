//! Simulate Case 2, fit the GP baseline and trigger on ten pooled
//! realisations, and compare with the truth.
//!
//! cargo run --release -p hawkes-emv --example quickstart

use hawkes_emv::emv::{fit_many, FitConfig};
use hawkes_emv::eval::{est_err, ks_uniform, loglik, rescale};
use hawkes_emv::simulate::synthetic_case;
use hawkes_emv::{Exec, HawkesModel};

fn main() -> hawkes_emv::Result<()> {
    let truth = synthetic_case(2)?;
    let seeds: Vec<u64> = (1..=10).collect();
    let train = truth.sample_many(&seeds, Exec::Parallel)?;
    let test = truth.sample(100)?;
    let n: usize = train.iter().map(|s| s.len()).sum();
    println!(
        "training on {n} events in {} sequences, testing on {}",
        train.len(),
        test.len()
    );

    let out = fit_many(&train, &FitConfig::default())?;
    let model = &out.model;
    println!(
        "{} EM iterations (converged: {}), final phi ELBO {:.3}",
        out.trace.iterations(),
        out.trace.converged,
        out.trace.records.last().map_or(f64::NAN, |r| r.elbo_phi)
    );

    let mu_err = est_err(|t| model.baseline(t), |t| truth.baseline(t), 0.0, truth.t_end());
    let phi_err = est_err(|s| model.trigger(s), |s| truth.trigger(s), 0.0, truth.t_phi());
    println!("EstErr(mu) = {mu_err:.3}, EstErr(phi) = {phi_err:.5}");
    println!(
        "held-out log-likelihood {:.3} (truth {:.3})",
        loglik(model, &test)?,
        loglik(&truth, &test)?
    );

    let ks = ks_uniform(&rescale(model, &test).z)?;
    println!(
        "time-rescaling KS on held-out data: D = {:.4}, p = {:.3}",
        ks.statistic, ks.p_value
    );
    for t in [10.0, 40.0, 60.0, 90.0] {
        println!(
            "  mu({t:>4}) = {:.3}  (truth {:.1})",
            model.baseline(t),
            truth.baseline(t)
        );
    }
    Ok(())
}
