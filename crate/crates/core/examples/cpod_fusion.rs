//! Constrained POD: a single run with its cost history, then a Student-t
//! ensemble over random initial blends.

use fieldfuse::cpod::{compute_pod, cpod_ensemble, run_cpod, truncate_rank, CpodOptions, ENERGY_TARGET};
use fieldfuse::stats::relative_l2;
use fieldfuse::synth::{bank_entries, generate_scenario, generate_snapshot_bank, ScenarioSpec};

pub fn run() -> fieldfuse::Result<()> {
    let spec = ScenarioSpec::default();
    let b = generate_scenario(&spec)?;
    let bank = generate_snapshot_bank(&spec, &bank_entries(91, spec.seed)?)?;
    let pod = compute_pod(&bank)?;
    let k = truncate_rank(&pod.singular_values, ENERGY_TARGET)?;
    println!(
        "{} snapshots, {k} modes carry 99% of the singular value sum",
        bank.len()
    );

    let opts = CpodOptions::default();
    let r = run_cpod(
        &bank,
        &b.mu_cfd,
        &b.mu_wt_filled,
        &b.z_measured,
        &b.operator,
        0.5,
        &opts,
    )?;
    println!(
        "converged {} after {} iterations, ranks {:?}, constraint residual {:.1e}",
        r.converged, r.iterations, r.rank_history, r.constraint_residual
    );
    for (k, j) in r.cost_history.iter().enumerate() {
        println!("  J[{}] = {j:.3e}", k + 1);
    }

    let e = cpod_ensemble(
        &bank,
        &b.mu_cfd,
        &b.mu_wt_filled,
        &b.z_measured,
        &b.operator,
        &opts,
        100,
        0.05,
        11,
    )?;
    println!(
        "ensemble of {}: t = {:.4}, max half width {:.2e}, error vs truth {:.4}",
        e.t,
        e.t_quantile,
        e.half_width().max(),
        relative_l2(&e.mean, &b.y_true)
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> fieldfuse::Result<()> {
    run()
}
