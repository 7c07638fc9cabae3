//! Small statistics helpers shared by the fusion methods and reports.

use nalgebra::DVector;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{FuseError, Result};

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(FuseError::arg(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    Ok(())
}

/// Two-sided standard-normal quantile: `P(|X| <= q) = level`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    check_level(level)?;
    Ok(Normal::standard().inverse_cdf(0.5 + 0.5 * level))
}

/// Two-sided Student-t quantile with `nu` degrees of freedom.
pub fn t_quantile(level: f64, nu: f64) -> Result<f64> {
    check_level(level)?;
    let t = StudentsT::new(0.0, 1.0, nu).map_err(|e| FuseError::arg(format!("degrees of freedom {nu}: {e}")))?;
    Ok(t.inverse_cdf(0.5 + 0.5 * level))
}

/// `sum |v[i+1] - v[i]|`.
pub fn total_variation(v: &DVector<f64>) -> f64 {
    v.as_slice().windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// `|a - b| / |b|`.
pub fn relative_l2(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn rms(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.norm_squared() / v.len() as f64).sqrt()
}
