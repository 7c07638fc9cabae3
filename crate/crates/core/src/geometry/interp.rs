use super::grid::SurfaceGrid;
use crate::error::{check_len, FuseError, Result};

/// Nearest source cells used by [`interpolate_to_common_grid`].
pub const NEIGHBOURS: usize = 4;
/// Distances below this count as coincident points.
pub const COINCIDENT: f64 = 1e-12;
const BBOX_TOL: f64 = 0.05;
const MIN_PRESENT_FRACTION: f64 = 0.1;

/// Transfers a cell field from `source` to `target` by inverse-distance
/// weighting (power 2) over the four nearest source cell centers.
///
/// A target center that coincides with a source center takes that value
/// unchanged, so interpolating onto the same grid is the identity.
pub fn interpolate_to_common_grid(values: &[f64], source: &SurfaceGrid, target: &SurfaceGrid) -> Result<Vec<f64>> {
    if source.is_empty() {
        return Err(FuseError::arg("source grid is empty"));
    }
    check_len("source field", values.len(), source.len())?;
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(FuseError::Data(format!(
            "source value {i} is not finite; impute gaps first"
        )));
    }
    check_same_geometry(source, target)?;

    let k = NEIGHBOURS.min(source.len());
    let mut out = Vec::with_capacity(target.len());
    let mut nearest: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for t in target.centers() {
        nearest.clear();
        for (j, s) in source.centers().iter().enumerate() {
            let d2 = (s - t).norm_squared();
            if nearest.len() < k || d2 < nearest[k - 1].0 {
                let at = nearest.partition_point(|(d, _)| *d <= d2);
                nearest.insert(at, (d2, j));
                nearest.truncate(k);
            }
        }
        let (d0, j0) = nearest[0];
        if d0.sqrt() < COINCIDENT {
            out.push(values[j0]);
            continue;
        }
        out.push(weighted_mean(nearest.iter().map(|&(d2, j)| (1.0 / d2, values[j]))));
    }
    Ok(out)
}

/// Fills missing cells (`None`) and leaves present cells untouched.
///
/// On curve grids each contiguous run of missing cells is filled by linear
/// interpolation in arc length between the present cells bounding it
/// (wrapping around on closed curves, held constant past the ends of open
/// ones). On unstructured grids every missing cell is the inverse-distance
/// weighted (power 2) mean of all present cells.
pub fn impute_missing(values: &[Option<f64>], grid: &SurfaceGrid) -> Result<Vec<f64>> {
    check_len("field", values.len(), grid.len())?;
    let present: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    if present.is_empty() {
        return Err(FuseError::Data("every cell is missing".into()));
    }
    if (present.len() as f64) < MIN_PRESENT_FRACTION * values.len() as f64 {
        return Err(FuseError::Data(format!(
            "only {} of {} cells present, need at least 10%",
            present.len(),
            values.len()
        )));
    }
    if let Some(i) = present.iter().find(|&&i| !values[i].unwrap().is_finite()) {
        return Err(FuseError::Data(format!("value {i} is not finite")));
    }
    if present.len() == values.len() {
        return Ok(values.iter().map(|v| v.unwrap()).collect());
    }
    if grid.topology().is_curve() {
        Ok(fill_along_curve(values, grid))
    } else {
        Ok(fill_idw(values, &present, grid))
    }
}

fn fill_along_curve(values: &[Option<f64>], grid: &SurfaceGrid) -> Vec<f64> {
    let n = values.len();
    let closed = grid.topology() == super::grid::Topology::ClosedCurve;
    let pos = grid.arc_positions();
    let perimeter = grid.total_measure();
    let mut out: Vec<f64> = values.iter().map(|v| v.unwrap_or(f64::NAN)).collect();

    let mut i = 0;
    while i < n {
        if values[i].is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && values[i].is_none() {
            i += 1;
        }
        let end = i; // exclusive
        let before = if start > 0 {
            Some(start - 1)
        } else if closed {
            (0..n).rev().find(|&j| values[j].is_some())
        } else {
            None
        };
        let after = if end < n {
            Some(end)
        } else if closed {
            (0..n).find(|&j| values[j].is_some())
        } else {
            None
        };
        // a gap across the seam of a closed curve is visited as two runs
        // with the same bounding cells
        for c in start..end {
            out[c] = match (before, after) {
                (Some(a), Some(b)) => {
                    let va = values[a].unwrap();
                    let vb = values[b].unwrap();
                    let unwrap = |p: f64, reference: f64, ahead: bool| {
                        if !closed {
                            p
                        } else if ahead && p < reference {
                            p + perimeter
                        } else if !ahead && p > reference {
                            p - perimeter
                        } else {
                            p
                        }
                    };
                    let pc = pos[c];
                    let pa = unwrap(pos[a], pc, false);
                    let pb = unwrap(pos[b], pc, true);
                    let t = (pc - pa) / (pb - pa);
                    va + t * (vb - va)
                }
                (Some(a), None) => values[a].unwrap(),
                (None, Some(b)) => values[b].unwrap(),
                (None, None) => unreachable!("at least one cell is present"),
            };
        }
    }
    out
}

fn fill_idw(values: &[Option<f64>], present: &[usize], grid: &SurfaceGrid) -> Vec<f64> {
    let centers = grid.centers();
    values
        .iter()
        .enumerate()
        .map(|(i, v)| match v {
            Some(v) => *v,
            None => {
                let c = centers[i];
                let coincident = present.iter().find(|&&j| (centers[j] - c).norm() < COINCIDENT);
                match coincident {
                    Some(&j) => values[j].unwrap(),
                    None => weighted_mean(
                        present
                            .iter()
                            .map(|&j| (1.0 / (centers[j] - c).norm_squared(), values[j].unwrap())),
                    ),
                }
            }
        })
        .collect()
}

/// Running weighted mean; exact for constant inputs.
fn weighted_mean(items: impl Iterator<Item = (f64, f64)>) -> f64 {
    let mut total = 0.0;
    let mut mean = 0.0;
    for (w, v) in items {
        total += w;
        mean += (w / total) * (v - mean);
    }
    mean
}

fn check_same_geometry(a: &SurfaceGrid, b: &SurfaceGrid) -> Result<()> {
    let (alo, ahi) = a.bounding_box();
    let (blo, bhi) = b.bounding_box();
    let size = (ahi - alo).norm().max((bhi - blo).norm());
    let off = (alo - blo).amax().max((ahi - bhi).amax());
    if off > BBOX_TOL * size {
        return Err(FuseError::Geometry(format!(
            "source and target bounding boxes differ by {off:.3e} (size {size:.3e})"
        )));
    }
    Ok(())
}
