use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::geometry::SurfaceGrid;
use crate::prior::FlightCondition;

/// Parameters of the analytic pressure distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthParams {
    pub mach: f64,
    pub reynolds_millions: f64,
    pub alpha_deg: f64,
    /// Scale of the thin-aerofoil loading.
    pub loading: f64,
    /// Peak suction due to thickness, before compressibility.
    pub thickness_suction: f64,
    pub zero_lift_alpha_deg: f64,
    /// Chordwise extent of the stagnation region.
    pub stagnation_width: f64,
    /// Chordwise shock location on the upper surface.
    pub shock_position: f64,
    pub shock_width: f64,
    /// Extra suction ahead of the shock.
    pub shock_strength: f64,
}

impl TruthParams {
    /// Defaults tied to the flight condition: stronger, further aft shocks
    /// at higher Mach number and incidence.
    pub fn from_condition(c: &FlightCondition) -> Self {
        let strength = (3.0 * (c.mach - 0.62)).max(0.0) * (0.5 + 0.2 * c.alpha_deg).max(0.0);
        let position = (0.3 + 2.0 * (c.mach - 0.65) + 0.04 * c.alpha_deg).clamp(0.15, 0.8);
        TruthParams {
            mach: c.mach,
            reynolds_millions: c.reynolds_millions,
            alpha_deg: c.alpha_deg,
            loading: 1.0,
            thickness_suction: 0.25,
            zero_lift_alpha_deg: -2.0,
            stagnation_width: 0.01,
            shock_position: position,
            shock_width: 0.03,
            shock_strength: strength,
        }
    }

    fn prandtl_glauert(&self) -> f64 {
        1.0 / (1.0 - self.mach.min(0.95).powi(2)).sqrt()
    }
}

/// Pressure coefficient at chord station `x` on the upper or lower surface,
/// at relative span position `eta` (zero for sections).
pub fn truth_value(p: &TruthParams, x: f64, upper: bool, eta: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    let beta = p.prandtl_glauert();
    let a = (p.alpha_deg - p.zero_lift_alpha_deg).to_radians();
    let span = (1.0 - 0.9 * eta.clamp(0.0, 1.0).powi(2)).sqrt();
    let viscous = 1.0 - 0.04 / p.reynolds_millions.sqrt();
    let load = p.loading * beta * span * viscous * 4.0 * a * ((1.0 - x) / (x + 0.02)).sqrt();
    let thickness = -p.thickness_suction * beta * (std::f64::consts::PI * x).sin();
    let mut cp = thickness + if upper { -0.5 * load } else { 0.5 * load };
    if upper {
        cp -= p.shock_strength * span * 0.5 * (1.0 - ((x - p.shock_position) / p.shock_width).tanh());
    }
    let stag = (-x / p.stagnation_width).exp();
    stag + (1.0 - stag) * cp
}

/// Evaluates the truth at every cell center. Cells whose outward normal
/// points up belong to the upper surface.
pub fn generate_truth(grid: &SurfaceGrid, p: &TruthParams) -> DVector<f64> {
    let (lo, hi) = grid.bounding_box();
    let span = hi.y - lo.y;
    DVector::from_iterator(
        grid.len(),
        grid.centers().iter().zip(grid.normals()).map(|(c, n)| {
            let eta = if grid.is_three_d() && span > 0.0 {
                (c.y - lo.y) / span
            } else {
                0.0
            };
            truth_value(p, c.x, n.z >= 0.0, eta)
        }),
    )
}
