//! Bayesian MAP fusion with pointwise bands, and the effect of the QoI noise
//! variance: small values pin the integrals, large values return the prior.

use fieldfuse::bayes::{confidence_bands, run_bayesian_fusion, BayesOptions};
use fieldfuse::prior::Hyperparameters;
use fieldfuse::stats::relative_l2;
use fieldfuse::synth::{generate_scenario, ScenarioSpec};

pub fn run() -> fieldfuse::Result<()> {
    let b = generate_scenario(&ScenarioSpec::default())?;
    let opts = BayesOptions::default();
    let mut hyper = Hyperparameters::airfoil();
    let r = run_bayesian_fusion(
        &b.mu_wt_filled,
        &b.mu_cfd,
        &b.z_measured,
        &b.operator,
        &b.grid,
        &hyper,
        &opts,
    )?;
    let (lo, hi) = confidence_bands(&r, 0.95)?;
    let inside = (0..b.grid.len())
        .filter(|&i| lo[i] <= b.y_true[i] && b.y_true[i] <= hi[i])
        .count();
    println!(
        "theta {:.4}, misfit {:.2e}, truth inside 95% band at {inside}/{} cells",
        r.theta,
        r.misfit,
        b.grid.len()
    );
    println!(
        "error vs truth: map {:.4}, wt {:.4}, cfd {:.4}",
        relative_l2(&r.y_map, &b.y_true),
        relative_l2(&b.mu_wt_filled, &b.y_true),
        relative_l2(&b.mu_cfd, &b.y_true)
    );

    println!("{:>8} {:>10} {:>12}", "tau2", "misfit", "|y-mu|/|mu|");
    for tau2 in [1e-6, 1e-4, 1e-2] {
        hyper.tau2 = tau2;
        let r = run_bayesian_fusion(
            &b.mu_wt_filled,
            &b.mu_cfd,
            &b.z_measured,
            &b.operator,
            &b.grid,
            &hyper,
            &opts,
        )?;
        println!(
            "{tau2:>8.0e} {:>10.2e} {:>12.2e}",
            r.misfit,
            relative_l2(&r.y_map, &r.prior_mean)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> fieldfuse::Result<()> {
    run()
}
