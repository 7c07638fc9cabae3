//! Bayesian fusion on a three-dimensional wing. Pass a cell count per
//! section as the first argument; the default 181 gives 8688 cells.

use std::time::Instant;

use fieldfuse::bayes::{run_bayesian_fusion, BayesOptions};
use fieldfuse::prior::Hyperparameters;
use fieldfuse::synth::{generate_scenario, GridSpec, ScenarioSpec};

pub fn run_with(cells: usize) -> fieldfuse::Result<()> {
    let spec = ScenarioSpec {
        grid: GridSpec {
            cells,
            ..GridSpec::wing()
        },
        ..ScenarioSpec::default()
    };
    let t0 = Instant::now();
    let b = generate_scenario(&spec)?;
    println!("{} cells generated in {:.2}s", b.grid.len(), t0.elapsed().as_secs_f64());
    let t1 = Instant::now();
    let r = run_bayesian_fusion(
        &b.mu_wt_filled,
        &b.mu_cfd,
        &b.z_measured,
        &b.operator,
        &b.grid,
        &Hyperparameters::surface(),
        &BayesOptions::default(),
    )?;
    println!(
        "{:?} solve, diagonal only: {}, misfit {:.2e}, {:.2}s",
        r.strategy,
        r.full_cov.is_none(),
        r.misfit,
        t1.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn run() -> fieldfuse::Result<()> {
    run_with(24)
}

#[allow(dead_code)]
fn main() -> fieldfuse::Result<()> {
    let cells = std::env::args()
        .nth(1)
        .map_or(Ok(181), |a| a.parse())
        .map_err(|e| fieldfuse::FuseError::Argument(format!("{e}")))?;
    run_with(cells)
}
