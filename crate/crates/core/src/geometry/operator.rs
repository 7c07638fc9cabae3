use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::grid::{Point, SurfaceGrid};
use crate::error::{check_len, FuseError, Result};

/// Relative singular-value threshold below which `H` is considered rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Integrated quantities of interest the operator can produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Qoi {
    /// Lift coefficient, perpendicular to the freestream.
    Lift,
    /// Pitching moment coefficient about the reference point, nose-up positive.
    Moment,
}

impl Qoi {
    pub fn label(self, three_d: bool) -> &'static str {
        match (self, three_d) {
            (Qoi::Lift, false) => "C_l",
            (Qoi::Moment, false) => "C_m",
            (Qoi::Lift, true) => "C_L",
            (Qoi::Moment, true) => "C_M",
        }
    }
}

/// Linear map from a cell field to a vector of integrated quantities:
/// `z = H^T y + offset`.
#[derive(Clone, Debug)]
pub struct OutputOperator {
    h: DMatrix<f64>,
    names: Vec<String>,
    offset: DVector<f64>,
    alpha: f64,
}

impl OutputOperator {
    /// Wraps an explicit `n x m` weight matrix. Checks `m < n` and full column rank.
    pub fn from_matrix(h: DMatrix<f64>, names: Vec<String>, alpha: f64) -> Result<Self> {
        let (n, m) = h.shape();
        if m == 0 {
            return Err(FuseError::Operator("operator has no QoI columns".into()));
        }
        if names.len() != m {
            return Err(FuseError::arg(format!("{} names for {m} QoI columns", names.len())));
        }
        if m >= n {
            return Err(FuseError::Operator(format!(
                "operator needs fewer QoIs than cells, got m = {m}, n = {n}"
            )));
        }
        if !h.iter().all(|v| v.is_finite()) {
            return Err(FuseError::Operator("operator has non-finite weights".into()));
        }
        let sv = h.clone().singular_values();
        let max = sv.max();
        let min = sv.min();
        if !(max > 0.0) || min <= RANK_TOL * max {
            return Err(FuseError::Operator(format!(
                "operator is rank deficient (singular values {min:e} .. {max:e})"
            )));
        }
        Ok(OutputOperator {
            h,
            names,
            offset: DVector::zeros(m),
            alpha,
        })
    }

    /// Sets the additive discrepancy `delta`.
    pub fn with_offset(mut self, offset: DVector<f64>) -> Result<Self> {
        check_len("offset", offset.len(), self.h.ncols())?;
        self.offset = offset;
        Ok(self)
    }

    /// The `n x m` weight matrix `H`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn cells(&self) -> usize {
        self.h.nrows()
    }

    pub fn qois(&self) -> usize {
        self.h.ncols()
    }

    /// `H^T y + delta`.
    pub fn apply(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("field", y.len(), self.cells())?;
        Ok(self.h.tr_mul(y) + &self.offset)
    }

    /// `H^T y`, without the offset.
    pub(crate) fn integrate(&self, y: &DVector<f64>) -> DVector<f64> {
        self.h.tr_mul(y)
    }
}

/// Builds the pressure integration operator for `grid` at angle of attack
/// `alpha` (radians).
///
/// Midpoint quadrature: the force on cell `i` is `-Cp_i * measure_i * normal_i`.
/// Lift is its projection on the direction perpendicular to the freestream,
/// divided by the reference area; the pitching moment is the spanwise
/// component of `(center - ref_point) x force`, divided by reference area
/// times reference length.
pub fn build_output_operator(grid: &SurfaceGrid, alpha: f64, qois: &[Qoi]) -> Result<OutputOperator> {
    if qois.is_empty() {
        return Err(FuseError::arg("at least one QoI is required"));
    }
    if !alpha.is_finite() {
        return Err(FuseError::arg("angle of attack must be finite"));
    }
    let n = grid.len();
    let r = grid.reference();
    let lift_dir = Point::new(-alpha.sin(), 0.0, alpha.cos());
    let origin = grid.ref_point();
    let mut h = DMatrix::zeros(n, qois.len());
    for (j, q) in qois.iter().enumerate() {
        for i in 0..n {
            let m = grid.measures()[i];
            let nrm = &grid.normals()[i];
            h[(i, j)] = match q {
                Qoi::Lift => -m * nrm.dot(&lift_dir) / r.area,
                Qoi::Moment => {
                    let arm = grid.centers()[i] - origin;
                    -m * arm.cross(nrm).y / (r.area * r.length)
                }
            };
        }
    }
    let names = qois.iter().map(|q| q.label(grid.is_three_d()).to_string()).collect();
    OutputOperator::from_matrix(h, names, alpha)
}

/// `H^T y + delta` as a plain function.
pub fn apply_forward(op: &OutputOperator, y: &DVector<f64>) -> Result<DVector<f64>> {
    op.apply(y)
}
