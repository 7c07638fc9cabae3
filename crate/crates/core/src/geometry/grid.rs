use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{FuseError, Result};

/// Spatial coordinates `(x, y, z)`. Two-dimensional sections live in the
/// `x`-`z` plane with `y = 0`; `y` is the spanwise direction.
pub type Point = Vector3<f64>;

const NORMAL_TOL: f64 = 1e-12;
const CLOSURE_TOL: f64 = 1e-6;

/// How the cells of a grid are connected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Cells are ordered along a closed curve; cell `i` neighbours `i - 1`
    /// and `i + 1` modulo the cell count.
    ClosedCurve,
    /// Cells are ordered along an open curve.
    OpenCurve,
    /// No usable ordering, e.g. a surface patch in three dimensions.
    Unstructured,
}

impl Topology {
    pub fn is_curve(self) -> bool {
        matches!(self, Topology::ClosedCurve | Topology::OpenCurve)
    }
}

/// Reference quantities used to non-dimensionalise integrated loads.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    /// Reference chord.
    pub length: f64,
    /// Reference area. Equal to the chord for two-dimensional sections.
    pub area: f64,
    /// Moment reference point.
    pub point: [f64; 3],
}

impl Default for Reference {
    fn default() -> Self {
        Reference {
            length: 1.0,
            area: 1.0,
            point: [0.25, 0.0, 0.0],
        }
    }
}

/// Discrete surface on which fields live: one value per cell.
#[derive(Clone, Debug)]
pub struct SurfaceGrid {
    nodes: Vec<Point>,
    centers: Vec<Point>,
    measures: Vec<f64>,
    normals: Vec<Point>,
    reference: Reference,
    topology: Topology,
    three_d: bool,
}

impl SurfaceGrid {
    /// Builds a grid from per-cell data and checks its invariants.
    ///
    /// Normals must already be unit length; every measure must be positive.
    /// A `ClosedCurve` topology additionally requires the discrete
    /// divergence `sum(measure * normal)` to vanish.
    pub fn from_cells(
        centers: Vec<Point>,
        normals: Vec<Point>,
        measures: Vec<f64>,
        topology: Topology,
        reference: Reference,
    ) -> Result<Self> {
        let n = centers.len();
        if n == 0 {
            return Err(FuseError::Geometry("grid has no cells".into()));
        }
        if normals.len() != n || measures.len() != n {
            return Err(FuseError::Geometry(format!(
                "inconsistent cell data: {} centers, {} normals, {} measures",
                n,
                normals.len(),
                measures.len()
            )));
        }
        let three_d = centers.iter().any(|c| c.y != 0.0) || normals.iter().any(|v| v.y != 0.0);
        let grid = SurfaceGrid {
            nodes: Vec::new(),
            centers,
            measures,
            normals,
            reference,
            topology,
            three_d,
        };
        grid.validate()?;
        Ok(grid)
    }

    fn validate(&self) -> Result<()> {
        for (i, (c, v)) in self.centers.iter().zip(&self.normals).enumerate() {
            if !c.iter().chain(v.iter()).all(|x| x.is_finite()) {
                return Err(FuseError::Geometry(format!("cell {i} has non-finite data")));
            }
            if (v.norm() - 1.0).abs() > NORMAL_TOL {
                return Err(FuseError::Geometry(format!("normal of cell {i} has norm {}", v.norm())));
            }
        }
        if let Some(i) = self.measures.iter().position(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(FuseError::Geometry(format!(
                "cell {i} has non-positive measure {}",
                self.measures[i]
            )));
        }
        let r = &self.reference;
        if !(r.length > 0.0 && r.area > 0.0) {
            return Err(FuseError::Geometry("reference length and area must be positive".into()));
        }
        if self.topology == Topology::ClosedCurve {
            let residual = self.divergence_residual();
            if residual > CLOSURE_TOL * self.total_measure() {
                return Err(FuseError::Geometry(format!(
                    "surface declared closed but |sum(measure * normal)| = {residual:e}"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Curve nodes for grids built from a contour; empty otherwise.
    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn centers(&self) -> &[Point] {
        &self.centers
    }

    pub fn measures(&self) -> &[f64] {
        &self.measures
    }

    pub fn normals(&self) -> &[Point] {
        &self.normals
    }

    pub fn reference(&self) -> Reference {
        self.reference
    }

    pub fn ref_point(&self) -> Point {
        Point::from(self.reference.point)
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn is_three_d(&self) -> bool {
        self.three_d
    }

    pub fn with_reference(mut self, reference: Reference) -> Result<Self> {
        self.reference = reference;
        self.validate()?;
        Ok(self)
    }

    pub fn total_measure(&self) -> f64 {
        self.measures.iter().sum()
    }

    /// `|sum_i measure_i * normal_i|`, zero for a closed body.
    pub fn divergence_residual(&self) -> f64 {
        self.measures
            .iter()
            .zip(&self.normals)
            .fold(Point::zeros(), |acc, (m, v)| acc + v * *m)
            .norm()
    }

    /// Cumulative arc-length position of each cell center along a curve grid,
    /// measured from the first node.
    pub fn arc_positions(&self) -> Vec<f64> {
        let mut pos = Vec::with_capacity(self.len());
        let mut s = 0.0;
        for m in &self.measures {
            pos.push(s + 0.5 * m);
            s += m;
        }
        pos
    }

    /// Axis-aligned bounding box of the cell centers.
    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = Point::repeat(f64::INFINITY);
        let mut hi = Point::repeat(f64::NEG_INFINITY);
        for c in &self.centers {
            lo = lo.inf(c);
            hi = hi.sup(c);
        }
        (lo, hi)
    }
}

/// Builds an airfoil-style closed contour grid with `n` cells of equal arc
/// length.
///
/// `upper` and `lower` are polylines in the `x`-`z` plane that share both
/// end points (leading and trailing edge). Either traversal direction is
/// accepted; cells are numbered counter-clockwise starting at the trailing
/// edge, so the first half runs over the upper surface. Cell measures are
/// chord lengths, which keeps `sum(measure * normal)` exactly zero.
/// Coordinates are taken as chord-normalised: unit reference chord and
/// moment reference at the quarter chord `(0.25, 0)`.
pub fn build_airfoil_grid(upper: &[(f64, f64)], lower: &[(f64, f64)], n: usize) -> Result<SurfaceGrid> {
    if n < 8 {
        return Err(FuseError::arg(format!("cell count must be at least 8, got {n}")));
    }
    if upper.len() < 2 || lower.len() < 2 {
        return Err(FuseError::Geometry("each surface needs at least two points".into()));
    }
    if !upper.iter().chain(lower).all(|(x, z)| x.is_finite() && z.is_finite()) {
        return Err(FuseError::Geometry("non-finite coordinate".into()));
    }

    let scale = upper
        .iter()
        .chain(lower)
        .map(|&(x, z)| x.abs().max(z.abs()))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let tol = 1e-6 * scale;
    let same = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1) <= tol;
    if !same(upper[0], lower[0]) || !same(upper[upper.len() - 1], lower[lower.len() - 1]) {
        return Err(FuseError::Geometry(
            "upper and lower surfaces do not share end points; the contour is open".into(),
        ));
    }

    // upper reversed, then lower without its first and last point
    let mut contour: Vec<(f64, f64)> = upper.iter().rev().copied().collect();
    contour.extend_from_slice(&lower[1..lower.len() - 1]);
    contour.dedup_by(|a, b| same(*a, *b));
    if contour.len() < 3 {
        return Err(FuseError::Geometry("contour is degenerate".into()));
    }

    if signed_area(&contour) < 0.0 {
        contour.reverse();
    }
    // start at the trailing edge (largest x)
    let te = contour
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .map(|(i, _)| i)
        .unwrap_or(0);
    contour.rotate_left(te);
    if signed_area(&contour).abs() <= tol * tol {
        return Err(FuseError::Geometry("contour encloses no area".into()));
    }
    if let Some((i, j)) = find_self_intersection(&contour) {
        return Err(FuseError::Geometry(format!(
            "contour self-intersects between segments {i} and {j}"
        )));
    }

    let nodes = resample_closed(&contour, n);
    let mut centers = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut measures = Vec::with_capacity(n);
    for i in 0..n {
        let a = nodes[i];
        let b = nodes[(i + 1) % n];
        let d = b - a;
        let len = d.norm();
        if len <= tol * 1e-3 {
            return Err(FuseError::Geometry(format!("cell {i} has zero length")));
        }
        centers.push((a + b) * 0.5);
        // counter-clockwise in the x-z plane: outward normal is (dz, 0, -dx)
        normals.push(Point::new(d.z, 0.0, -d.x) / len);
        measures.push(len);
    }

    // coordinates are chord-normalised; callers with other scalings use with_reference
    let reference = Reference::default();

    let mut grid = SurfaceGrid::from_cells(centers, normals, measures, Topology::ClosedCurve, reference)?;
    grid.nodes = nodes;
    Ok(grid)
}

/// Extrudes a section spanwise into a three-dimensional wing surface with
/// `n_chord * n_span` quadrilateral cells. The tips are left open.
pub fn build_wing_grid(
    upper: &[(f64, f64)],
    lower: &[(f64, f64)],
    n_chord: usize,
    n_span: usize,
    span: f64,
) -> Result<SurfaceGrid> {
    if n_span == 0 || !(span > 0.0) {
        return Err(FuseError::arg(
            "wing needs a positive span and at least one spanwise station",
        ));
    }
    let section = build_airfoil_grid(upper, lower, n_chord)?;
    let dy = span / n_span as f64;
    let n = n_chord * n_span;
    let mut centers = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut measures = Vec::with_capacity(n);
    for j in 0..n_span {
        let y = (j as f64 + 0.5) * dy;
        for i in 0..section.len() {
            let c = section.centers[i];
            centers.push(Point::new(c.x, y, c.z));
            normals.push(section.normals[i]);
            measures.push(section.measures[i] * dy);
        }
    }
    let r = section.reference;
    let reference = Reference {
        length: r.length,
        area: r.length * span,
        point: r.point,
    };
    let mut grid = SurfaceGrid::from_cells(centers, normals, measures, Topology::Unstructured, reference)?;
    grid.three_d = true;
    Ok(grid)
}

/// Upper and lower surface coordinates of a NACA four-digit section with a
/// closed trailing edge, `points` per side on a cosine distribution.
///
/// `camber`, `camber_pos` and `thickness` are fractions of chord, e.g.
/// `(0.02, 0.4, 0.12)` for a 2412.
/// Upper and lower surface coordinates, leading edge first.
pub type Section = (Vec<(f64, f64)>, Vec<(f64, f64)>);

pub fn naca4(camber: f64, camber_pos: f64, thickness: f64, points: usize) -> Section {
    let points = points.max(2);
    let mut upper = Vec::with_capacity(points);
    let mut lower = Vec::with_capacity(points);
    for i in 0..points {
        let beta = std::f64::consts::PI * i as f64 / (points - 1) as f64;
        let x = 0.5 * (1.0 - beta.cos());
        let (xu, zu, xl, zl) = naca4_point(camber, camber_pos, thickness, x);
        upper.push((xu, zu));
        lower.push((xl, zl));
    }
    (upper, lower)
}

/// Upper and lower surface points of a NACA four-digit section at chord station `x`.
pub fn naca4_point(camber: f64, camber_pos: f64, thickness: f64, x: f64) -> (f64, f64, f64, f64) {
    let yt = 5.0
        * thickness
        * (0.2969 * x.sqrt() - 0.1260 * x - 0.3516 * x.powi(2) + 0.2843 * x.powi(3) - 0.1036 * x.powi(4));
    let (yc, slope) = if camber == 0.0 || camber_pos <= 0.0 || camber_pos >= 1.0 {
        (0.0, 0.0)
    } else if x < camber_pos {
        let p = camber_pos;
        (
            camber / (p * p) * (2.0 * p * x - x * x),
            2.0 * camber / (p * p) * (p - x),
        )
    } else {
        let p = camber_pos;
        let q = (1.0 - p) * (1.0 - p);
        (
            camber / q * ((1.0 - 2.0 * p) + 2.0 * p * x - x * x),
            2.0 * camber / q * (p - x),
        )
    };
    let th = slope.atan();
    (
        x - yt * th.sin(),
        yc + yt * th.cos(),
        x + yt * th.sin(),
        yc - yt * th.cos(),
    )
}

fn signed_area(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let (x0, z0) = pts[i];
            let (x1, z1) = pts[(i + 1) % n];
            x0 * z1 - x1 * z0
        })
        .sum::<f64>()
        * 0.5
}

fn resample_closed(pts: &[(f64, f64)], n: usize) -> Vec<Point> {
    let m = pts.len();
    let mut cum = Vec::with_capacity(m + 1);
    cum.push(0.0);
    for i in 0..m {
        let (x0, z0) = pts[i];
        let (x1, z1) = pts[(i + 1) % m];
        cum.push(cum[i] + (x1 - x0).hypot(z1 - z0));
    }
    let total = cum[m];
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for j in 0..n {
        let s = total * j as f64 / n as f64;
        while seg + 1 < m && cum[seg + 1] <= s {
            seg += 1;
        }
        let (x0, z0) = pts[seg];
        let (x1, z1) = pts[(seg + 1) % m];
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
        out.push(Point::new(x0 + t * (x1 - x0), 0.0, z0 + t * (z1 - z0)));
    }
    out
}

fn find_self_intersection(pts: &[(f64, f64)]) -> Option<(usize, usize)> {
    let m = pts.len();
    let seg = |i: usize| (pts[i], pts[(i + 1) % m]);
    for i in 0..m {
        let (a, b) = seg(i);
        let (ax0, ax1) = (a.0.min(b.0), a.0.max(b.0));
        let (az0, az1) = (a.1.min(b.1), a.1.max(b.1));
        for j in i + 2..m {
            if i == 0 && j == m - 1 {
                continue;
            }
            let (c, d) = seg(j);
            if c.0.max(d.0) < ax0 || c.0.min(d.0) > ax1 || c.1.max(d.1) < az0 || c.1.min(d.1) > az1 {
                continue;
            }
            if segments_intersect(a, b, c, d) {
                return Some((i, j));
            }
        }
    }
    None
}

fn segments_intersect(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let orient = |p: (f64, f64), q: (f64, f64), r: (f64, f64)| (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0);
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |p: (f64, f64), q: (f64, f64), r: (f64, f64)| {
        r.0 >= p.0.min(q.0) && r.0 <= p.0.max(q.0) && r.1 >= p.1.min(q.1) && r.1 <= p.1.max(q.1)
    };
    (d1 == 0.0 && on(c, d, a)) || (d2 == 0.0 && on(c, d, b)) || (d3 == 0.0 && on(a, b, c)) || (d4 == 0.0 && on(a, b, d))
}
