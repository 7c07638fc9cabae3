//! Both fusion methods on all eleven test conditions.

use fieldfuse::bayes::{run_bayesian_fusion, BayesOptions};
use fieldfuse::cpod::{cpod_ensemble, CpodOptions};
use fieldfuse::prior::Hyperparameters;
use fieldfuse::stats::relative_l2;
use fieldfuse::synth::{
    bank_entries, generate_scenario, generate_snapshot_bank, spec_for_condition, table1_conditions, ScenarioSpec,
};

pub fn run() -> fieldfuse::Result<()> {
    let base = ScenarioSpec::default();
    let bank = generate_snapshot_bank(&base, &bank_entries(91, base.seed)?)?;
    let hyper = Hyperparameters::airfoil();
    println!(
        "{:>4} {:>9} {:>9} {:>8} {:>8} {:>8} {:>8}",
        "case", "misfit", "cpod-map", "map", "cpod", "wt", "cfd"
    );
    for (i, c) in table1_conditions().into_iter().enumerate() {
        let b = generate_scenario(&spec_for_condition(&base, c, i))?;
        let r = run_bayesian_fusion(
            &b.mu_wt_filled,
            &b.mu_cfd,
            &b.z_measured,
            &b.operator,
            &b.grid,
            &hyper,
            &BayesOptions::default(),
        )?;
        let e = cpod_ensemble(
            &bank,
            &b.mu_cfd,
            &b.mu_wt_filled,
            &b.z_measured,
            &b.operator,
            &CpodOptions::default(),
            20,
            0.05,
            i as u64,
        )?;
        let err = |v| relative_l2(v, &b.y_true);
        println!(
            "{:>4} {:>9.2e} {:>9.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            i + 1,
            r.misfit,
            relative_l2(&e.mean, &r.y_map),
            err(&r.y_map),
            err(&e.mean),
            err(&b.mu_wt_filled),
            err(&b.mu_cfd)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> fieldfuse::Result<()> {
    run()
}
