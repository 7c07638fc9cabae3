//! Fused field roughness against snapshot bank size.

use fieldfuse::cpod::{compute_pod, cpod_ensemble, truncate_rank, CpodOptions, ENERGY_TARGET};
use fieldfuse::stats::{relative_l2, total_variation};
use fieldfuse::synth::{bank_entries, generate_scenario, generate_snapshot_bank, ScenarioSpec};

pub fn run() -> fieldfuse::Result<()> {
    let spec = ScenarioSpec::default();
    let b = generate_scenario(&spec)?;
    println!("truth total variation {:.3}", total_variation(&b.y_true));
    for q in [22, 31, 51, 91] {
        let bank = generate_snapshot_bank(&spec, &bank_entries(q, spec.seed)?)?;
        let k = truncate_rank(&compute_pod(&bank)?.singular_values, ENERGY_TARGET)?;
        let e = cpod_ensemble(
            &bank,
            &b.mu_cfd,
            &b.mu_wt_filled,
            &b.z_measured,
            &b.operator,
            &CpodOptions::default(),
            20,
            0.05,
            3,
        )?;
        println!(
            "q = {q:>2}: k = {k:>2}, TV {:.3}, error {:.4}",
            total_variation(&e.mean),
            relative_l2(&e.mean, &b.y_true)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> fieldfuse::Result<()> {
    run()
}
