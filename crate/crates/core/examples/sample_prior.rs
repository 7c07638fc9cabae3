//! Fusion weight, sample-based prior and draws from it.

use fieldfuse::prior::{build_prior, estimate_theta, sample_prior, Hyperparameters};
use fieldfuse::synth::{generate_scenario, ScenarioSpec};

pub fn run() -> fieldfuse::Result<()> {
    let b = generate_scenario(&ScenarioSpec::default())?;
    let theta = estimate_theta(&b.mu_wt_filled, &b.mu_cfd, &b.operator, &b.z_measured)?;
    println!("theta = {theta:.4} (weight on the measurement)");

    let mut hyper = Hyperparameters::airfoil();
    hyper.ell = 0.05;
    let prior = build_prior(&b.grid, &b.mu_wt_filled, &b.mu_cfd, theta, &hyper)?;
    println!(
        "prior variance {:.3e}, length scale {}",
        prior.covariance.diagonal()[0],
        prior.length_scale
    );

    let draws = sample_prior(&prior, 200, 7)?;
    let n = prior.dim() as f64;
    let dev = |j: usize| (draws.row(j).transpose() - &prior.mean).norm_squared() / n;
    let mean_sq = (0..draws.nrows()).map(dev).sum::<f64>() / draws.nrows() as f64;
    println!(
        "first draw rms deviation {:.4}, ensemble variance {mean_sq:.3e}",
        dev(0).sqrt()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> fieldfuse::Result<()> {
    run()
}
