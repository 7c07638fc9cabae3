//! Builds a NACA 2412 section, integrates lift and moment from a pressure
//! field and checks the flat-plate relation `C_l = 2 pi alpha`.

use fieldfuse::geometry::{build_airfoil_grid, build_output_operator, naca4, Qoi};
use fieldfuse::prior::FlightCondition;
use fieldfuse::synth::{generate_truth, TruthParams};

pub fn run() -> fieldfuse::Result<()> {
    let (upper, lower) = naca4(0.02, 0.4, 0.12, 513);
    let grid = build_airfoil_grid(&upper, &lower, 128)?;
    println!(
        "{} cells, perimeter {:.4}, closure residual {:.1e}",
        grid.len(),
        grid.total_measure(),
        grid.divergence_residual()
    );

    let cond = FlightCondition::new(0.676, 5.7, 2.4);
    let op = build_output_operator(&grid, cond.alpha_rad(), &[Qoi::Lift, Qoi::Moment])?;
    let cp = generate_truth(&grid, &TruthParams::from_condition(&cond));
    let z = op.apply(&cp)?;
    for (name, v) in op.names().iter().zip(z.iter()) {
        println!("{name} = {v:.4}");
    }

    // Very thin symmetric section carrying the flat-plate 1/sqrt loading.
    let n = 400;
    let side = |sign: f64| -> Vec<(f64, f64)> {
        (0..=n)
            .map(|i| {
                let x = 0.5 * (1.0 - (std::f64::consts::PI * i as f64 / n as f64).cos());
                (x, sign * 1e-4 * (x * (1.0 - x)).sqrt())
            })
            .collect()
    };
    let plate = build_airfoil_grid(&side(1.0), &side(-1.0), 2 * n)?;
    let alpha = 2f64.to_radians();
    let op = build_output_operator(&plate, alpha, &[Qoi::Lift])?;
    let dcp = |x: f64| 4.0 * alpha * ((1.0 - x) / x.max(1e-9)).sqrt();
    let y = nalgebra::DVector::from_iterator(
        plate.len(),
        plate.centers().iter().zip(plate.normals()).map(|(c, nrm)| {
            let half = 0.5 * dcp(c.x);
            if nrm.z >= 0.0 {
                -half
            } else {
                half
            }
        }),
    );
    let cl = op.apply(&y)?[0];
    println!(
        "flat plate: C_l = {cl:.4}, 2 pi alpha = {:.4}",
        2.0 * std::f64::consts::PI * alpha
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> fieldfuse::Result<()> {
    run()
}
