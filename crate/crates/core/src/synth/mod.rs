//! Synthetic scenarios with a known true field.
//!
//! The truth is an analytic transonic-looking pressure distribution; the
//! simulation source adds a smooth correlated bias, the measurement source
//! adds white noise and a contiguous gap, and the integrated QoIs get a
//! small Gaussian error. Every draw is recorded so a bundle can be rebuilt
//! bit for bit from its spec.

mod lhs;
mod truth;

pub use lhs::{design_conditions, latin_hypercube, maximin_distance, maximin_lhs, DesignBounds, LHS_TRIES};
pub use truth::{generate_truth, truth_value, TruthParams};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cpod::SnapshotSet;
use crate::error::{check_len, FuseError, Result};
use crate::geometry::{
    build_airfoil_grid, build_output_operator, build_wing_grid, impute_missing, naca4, OutputOperator, Qoi, SurfaceGrid,
};
use crate::prior::{Fidelity, FlightCondition};

const STREAM_NOISE: u64 = 1;
const STREAM_GAP: u64 = 2;
const STREAM_BIAS: u64 = 3;
const STREAM_QOI: u64 = 4;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Airfoil,
    Wing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub kind: GridKind,
    /// Cells around the section.
    pub cells: usize,
    /// Spanwise stations, wings only.
    pub span_stations: usize,
    pub span: f64,
    /// NACA four-digit camber, camber position and thickness.
    pub naca: [f64; 3],
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            kind: GridKind::Airfoil,
            cells: 128,
            span_stations: 48,
            span: 3.0,
            naca: [0.02, 0.4, 0.12],
        }
    }
}

impl GridSpec {
    /// Wing with `48 x 181 = 8688` cells.
    pub fn wing() -> Self {
        GridSpec {
            kind: GridKind::Wing,
            cells: 181,
            ..GridSpec::default()
        }
    }

    pub fn build(&self) -> Result<SurfaceGrid> {
        let [m, p, t] = self.naca;
        let (upper, lower) = naca4(m, p, t, 4 * self.cells.max(64) + 1);
        match self.kind {
            GridKind::Airfoil => build_airfoil_grid(&upper, &lower, self.cells),
            GridKind::Wing => build_wing_grid(&upper, &lower, self.cells, self.span_stations, self.span),
        }
    }
}

/// Overrides for the truth model; `None` derives the value from the condition.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthSpec {
    pub loading: Option<f64>,
    pub shock_position: Option<f64>,
    pub shock_width: Option<f64>,
    pub shock_strength: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSpec {
    /// Standard deviation of the white measurement noise.
    pub noise_std: f64,
    /// Fraction of cells missing from the measurement, as one contiguous run.
    pub gap_fraction: f64,
    /// First missing cell as a fraction of the cell count; drawn when unset.
    pub gap_start: Option<f64>,
    /// RMS of the simulation bias.
    pub bias_amplitude: f64,
    /// Correlation length of the simulation bias, in chords.
    pub bias_length_scale: f64,
    /// Chordwise shift of the simulated shock.
    pub shock_shift: f64,
    /// Seed of the bias draw; the scenario seed when unset.
    pub bias_seed: Option<u64>,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            noise_std: 0.01,
            gap_fraction: 0.1,
            gap_start: None,
            bias_amplitude: 0.015,
            bias_length_scale: 0.15,
            shock_shift: 0.02,
            bias_seed: None,
        }
    }
}

/// Everything needed to generate one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub grid: GridSpec,
    pub condition: FlightCondition,
    pub truth: TruthSpec,
    pub corruption: CorruptionSpec,
    /// Standard deviation of the QoI measurement error.
    pub qoi_noise_std: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            grid: GridSpec::default(),
            condition: table1_conditions()[1],
            truth: TruthSpec::default(),
            corruption: CorruptionSpec::default(),
            qoi_noise_std: 1e-4,
            seed: 2024,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let c = &self.corruption;
        let g = &self.grid;
        if g.cells < 8 {
            return Err(FuseError::arg(format!("grid needs at least 8 cells, got {}", g.cells)));
        }
        if g.kind == GridKind::Wing && (g.span_stations == 0 || !(g.span > 0.0)) {
            return Err(FuseError::arg("wing grid needs span stations and a positive span"));
        }
        let cond = &self.condition;
        if !(cond.mach >= 0.0 && cond.mach < 1.0) || !(cond.reynolds_millions > 0.0) || !cond.alpha_deg.is_finite() {
            return Err(FuseError::arg(format!(
                "condition needs 0 <= Mach < 1 and Re > 0, got {cond:?}"
            )));
        }
        if let Some(xs) = self.truth.shock_position {
            if !(xs > 0.0 && xs < 1.0) {
                return Err(FuseError::arg(format!("shock position must lie in (0, 1), got {xs}")));
            }
        }
        if let Some(w) = self.truth.shock_width {
            if !(w > 0.0) {
                return Err(FuseError::arg(format!("shock width must be positive, got {w}")));
            }
        }
        if let Some(s) = self.truth.shock_strength {
            if !(s >= 0.0) {
                return Err(FuseError::arg(format!("shock strength must be >= 0, got {s}")));
            }
        }
        let nonneg = [
            ("noise_std", c.noise_std),
            ("bias_amplitude", c.bias_amplitude),
            ("qoi_noise_std", self.qoi_noise_std),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(FuseError::arg(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(0.0..=0.5).contains(&c.gap_fraction) {
            return Err(FuseError::arg(format!(
                "gap fraction must lie in [0, 0.5], got {}",
                c.gap_fraction
            )));
        }
        if let Some(s) = c.gap_start {
            if !(0.0..1.0).contains(&s) {
                return Err(FuseError::arg(format!("gap start must lie in [0, 1), got {s}")));
            }
        }
        if !(c.bias_length_scale > 0.0) {
            return Err(FuseError::arg("bias length scale must be positive"));
        }
        if !c.shock_shift.is_finite() {
            return Err(FuseError::arg("shock shift must be finite"));
        }
        Ok(())
    }

    pub fn truth_params(&self) -> TruthParams {
        let mut p = TruthParams::from_condition(&self.condition);
        let t = &self.truth;
        if let Some(v) = t.loading {
            p.loading = v;
        }
        if let Some(v) = t.shock_position {
            p.shock_position = v;
        }
        if let Some(v) = t.shock_width {
            p.shock_width = v;
        }
        if let Some(v) = t.shock_strength {
            p.shock_strength = v;
        }
        p
    }

    pub fn bias_seed(&self) -> u64 {
        self.corruption.bias_seed.unwrap_or(self.seed)
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }
}

/// The eleven test conditions: Mach, Reynolds number (millions), alpha (deg).
pub fn table1_conditions() -> Vec<FlightCondition> {
    [
        (0.676, 5.7, 2.40),
        (0.676, 5.7, -2.18),
        (0.600, 6.3, 2.57),
        (0.725, 6.5, 2.92),
        (0.725, 6.5, 2.55),
        (0.728, 6.5, 3.22),
        (0.730, 6.5, 3.19),
        (0.750, 6.2, 3.19),
        (0.730, 2.7, 3.19),
        (0.745, 2.7, 3.19),
        (0.740, 2.7, 3.19),
    ]
    .iter()
    .map(|&(m, re, a)| FlightCondition::new(m, re, a))
    .collect()
}

/// Noisy measurement with a contiguous gap.
#[derive(Clone, Debug)]
pub struct Measurement {
    pub values: Vec<Option<f64>>,
    /// Noise added to every cell, including the ones later masked.
    pub noise: DVector<f64>,
    /// First missing cell and the number of missing cells.
    pub gap: (usize, usize),
}

/// Adds white noise and masks a contiguous run of cells.
pub fn corrupt_measurement(y_true: &DVector<f64>, spec: &ScenarioSpec, seed: u64) -> Result<Measurement> {
    let n = y_true.len();
    let c = &spec.corruption;
    let mut rng = rng_for(seed, STREAM_NOISE);
    let noise = DVector::from_fn(n, |_, _| c.noise_std * rng.sample::<f64, _>(StandardNormal));
    let len = (c.gap_fraction * n as f64).round() as usize;
    let start = match c.gap_start {
        Some(s) => (s * n as f64).floor() as usize,
        None => rng_for(seed, STREAM_GAP).random_range(0..n),
    };
    let mut values: Vec<Option<f64>> = (0..n).map(|i| Some(y_true[i] + noise[i])).collect();
    for k in 0..len {
        values[(start + k) % n] = None;
    }
    Ok(Measurement {
        values,
        noise,
        gap: (start, len),
    })
}

/// Smooth correlated bias: white noise filtered by a squared-exponential
/// kernel over cell-center distance, rescaled to the requested RMS.
pub fn bias_field(grid: &SurfaceGrid, amplitude: f64, length_scale: f64, seed: u64) -> DVector<f64> {
    let n = grid.len();
    let mut rng = rng_for(seed, STREAM_BIAS);
    let white: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    if amplitude == 0.0 {
        return DVector::zeros(n);
    }
    let centers = grid.centers();
    let inv = 1.0 / (2.0 * length_scale * length_scale);
    let raw = DVector::from_fn(n, |i, _| {
        centers
            .iter()
            .zip(&white)
            .map(|(c, w)| (-(c - centers[i]).norm_squared() * inv).exp() * w)
            .sum::<f64>()
    });
    let rms = (raw.norm_squared() / n as f64).sqrt();
    raw * (amplitude / rms)
}

/// Simulation stand-in: the truth with a moved shock plus a smooth bias.
///
/// Returns the biased field and the bias draw.
pub fn bias_simulation(
    y_true: &DVector<f64>,
    grid: &SurfaceGrid,
    spec: &ScenarioSpec,
    seed: u64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_len("truth", y_true.len(), grid.len())?;
    let c = &spec.corruption;
    let bias = bias_field(grid, c.bias_amplitude, c.bias_length_scale, seed);
    let mut field = y_true + &bias;
    if c.shock_shift != 0.0 {
        let p = spec.truth_params();
        let moved = TruthParams {
            shock_position: (p.shock_position + c.shock_shift).clamp(0.01, 0.99),
            ..p
        };
        field += generate_truth(grid, &moved) - generate_truth(grid, &p);
    }
    Ok((field, bias))
}

/// Noiseless and measured QoIs of the true field, and the noise draw.
pub fn measure_qois(
    y_true: &DVector<f64>,
    op: &OutputOperator,
    noise_std: f64,
    seed: u64,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let noiseless = op.apply(y_true)?;
    let normal = Normal::new(0.0, noise_std).map_err(|e| FuseError::arg(e.to_string()))?;
    let mut rng = rng_for(seed, STREAM_QOI);
    let draw = DVector::from_fn(op.qois(), |_, _| normal.sample(&mut rng));
    Ok((&noiseless + &draw, noiseless, draw))
}

/// Every random quantity that went into a bundle.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub bias_seed: u64,
    pub truth: TruthParams,
    pub gap_start: usize,
    pub gap_len: usize,
    pub measurement_noise: Vec<f64>,
    pub bias: Vec<f64>,
    pub qoi_noise: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ScenarioBundle {
    pub spec: ScenarioSpec,
    pub grid: SurfaceGrid,
    pub operator: OutputOperator,
    pub y_true: DVector<f64>,
    /// Simulation source.
    pub mu_cfd: DVector<f64>,
    /// Measurement source with gaps.
    pub mu_wt: Vec<Option<f64>>,
    /// Measurement source with its gap imputed.
    pub mu_wt_filled: DVector<f64>,
    pub z_measured: DVector<f64>,
    pub z_noiseless: DVector<f64>,
    pub provenance: Provenance,
}

/// Lift and moment operator at the condition's angle of attack.
pub fn scenario_operator(grid: &SurfaceGrid, condition: &FlightCondition) -> Result<OutputOperator> {
    build_output_operator(grid, condition.alpha_rad(), &[Qoi::Lift, Qoi::Moment])
}

pub fn generate_scenario(spec: &ScenarioSpec) -> Result<ScenarioBundle> {
    spec.validate()?;
    let grid = spec.grid.build()?;
    let operator = scenario_operator(&grid, &spec.condition)?;
    let params = spec.truth_params();
    let y_true = generate_truth(&grid, &params);
    let measurement = corrupt_measurement(&y_true, spec, spec.seed)?;
    let mu_wt_filled = DVector::from_vec(impute_missing(&measurement.values, &grid)?);
    let (mu_cfd, bias) = bias_simulation(&y_true, &grid, spec, spec.bias_seed())?;
    let (z_measured, z_noiseless, qoi_noise) = measure_qois(&y_true, &operator, spec.qoi_noise_std, spec.seed)?;
    Ok(ScenarioBundle {
        provenance: Provenance {
            seed: spec.seed,
            bias_seed: spec.bias_seed(),
            truth: params,
            gap_start: measurement.gap.0,
            gap_len: measurement.gap.1,
            measurement_noise: measurement.noise.iter().copied().collect(),
            bias: bias.iter().copied().collect(),
            qoi_noise: qoi_noise.iter().copied().collect(),
        },
        spec: spec.clone(),
        grid,
        operator,
        y_true,
        mu_cfd,
        mu_wt: measurement.values,
        mu_wt_filled,
        z_measured,
        z_noiseless,
    })
}

/// Spec for another condition sharing the base grid, corruption model and
/// simulation bias. The measurement noise is reseeded per `index`; the base
/// condition itself keeps the base spec unchanged.
pub fn spec_for_condition(base: &ScenarioSpec, condition: FlightCondition, index: usize) -> ScenarioSpec {
    if condition == base.condition {
        return base.clone();
    }
    let mut spec = base.clone();
    spec.condition = condition;
    spec.truth = TruthSpec {
        loading: base.truth.loading,
        shock_width: base.truth.shock_width,
        ..TruthSpec::default()
    };
    spec.corruption.bias_seed = Some(base.bias_seed());
    spec.corruption.gap_start = None;
    spec.seed = base.seed.wrapping_add(1 + index as u64);
    spec
}

/// Snapshot bank with one column per `(condition, fidelity)` entry.
/// Measurement snapshots have their gaps imputed.
pub fn generate_snapshot_bank(base: &ScenarioSpec, entries: &[(FlightCondition, Fidelity)]) -> Result<SnapshotSet> {
    base.validate()?;
    let grid = base.grid.build()?;
    let mut columns = Vec::with_capacity(entries.len());
    for (i, (cond, fidelity)) in entries.iter().enumerate() {
        let spec = spec_for_condition(base, *cond, i);
        let y = generate_truth(&grid, &spec.truth_params());
        let col = match fidelity {
            Fidelity::Simulation => bias_simulation(&y, &grid, &spec, spec.bias_seed())?.0,
            Fidelity::Measurement => {
                let m = corrupt_measurement(&y, &spec, spec.seed)?;
                DVector::from_vec(impute_missing(&m.values, &grid)?)
            }
        };
        columns.push(col);
    }
    let u = nalgebra::DMatrix::from_columns(&columns);
    SnapshotSet::new(
        u,
        entries.iter().map(|e| e.0).collect(),
        entries.iter().map(|e| e.1).collect(),
    )
}

/// Bank of total size `q >= 22`: see [`standard_bank_entries`].
pub fn bank_entries(q: usize, seed: u64) -> Result<Vec<(FlightCondition, Fidelity)>> {
    let base = 2 * table1_conditions().len();
    if q < base {
        return Err(FuseError::arg(format!(
            "snapshot bank size must be at least {base}, got {q}"
        )));
    }
    Ok(standard_bank_entries(q - base, seed))
}

/// The eleven test conditions in both fidelities, followed by `extra`
/// simulation-only conditions from a maximin Latin hypercube.
pub fn standard_bank_entries(extra: usize, seed: u64) -> Vec<(FlightCondition, Fidelity)> {
    let mut entries = Vec::new();
    for c in table1_conditions() {
        entries.push((c, Fidelity::Simulation));
        entries.push((c, Fidelity::Measurement));
    }
    for c in design_conditions(extra, &DesignBounds::default(), seed) {
        entries.push((c, Fidelity::Simulation));
    }
    entries
}
