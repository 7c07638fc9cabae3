//! Generates a scenario, writes it as a bundle directory and reads it back.

use fieldfuse::io::{read_bundle, write_bank, write_bundle};
use fieldfuse::synth::{bank_entries, generate_scenario, generate_snapshot_bank, table1_conditions, ScenarioSpec};

pub fn run() -> fieldfuse::Result<()> {
    let spec: ScenarioSpec = ScenarioSpec::from_toml(
        r#"
        seed = 7
        [corruption]
        noise_std = 0.02
        gap_fraction = 0.15
        "#,
    )
    .map_err(fieldfuse::FuseError::Argument)?;
    let b = generate_scenario(&spec)?;
    let missing = b.mu_wt.iter().filter(|v| v.is_none()).count();
    println!(
        "condition {:?}: {} cells, {missing} missing in the measurement",
        spec.condition,
        b.grid.len()
    );
    println!(
        "z measured {:?}, noiseless {:?}",
        b.z_measured.as_slice(),
        b.z_noiseless.as_slice()
    );

    let dir = std::env::temp_dir().join(format!("fieldfuse-bundle-{}", std::process::id()));
    write_bundle(&dir, &b)?;
    write_bank(
        &dir.join("bank"),
        &generate_snapshot_bank(&spec, &bank_entries(22, spec.seed)?)?,
    )?;
    let back = read_bundle(&dir)?;
    assert_eq!(back.mu_cfd, b.mu_cfd);
    println!("bundle round-trips through {}", dir.display());
    let _ = std::fs::remove_dir_all(&dir);

    println!("{:>4} {:>6} {:>6} {:>6}", "case", "M", "Re/1e6", "alpha");
    for (i, c) in table1_conditions().iter().enumerate() {
        println!(
            "{:>4} {:>6.3} {:>6.1} {:>6.2}",
            i + 1,
            c.mach,
            c.reynolds_millions,
            c.alpha_deg
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> fieldfuse::Result<()> {
    run()
}
