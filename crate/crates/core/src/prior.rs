//! Sample-based prior: the fusion weight, the fused prior mean and the
//! squared-exponential spatial covariance.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, FuseError, Result};
use crate::geometry::{OutputOperator, Point, SurfaceGrid};

/// Below this squared distance between the two sources' QoIs the fusion
/// weight is undetermined and defaults to one half.
const THETA_DEGENERATE: f64 = 1e-14;
/// Default diagonal inflation, relative to the prior variance.
pub const DEFAULT_NUGGET: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    Simulation,
    Measurement,
}

/// Flight condition a field belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlightCondition {
    pub mach: f64,
    /// Reynolds number in millions.
    pub reynolds_millions: f64,
    pub alpha_deg: f64,
}

impl FlightCondition {
    pub fn new(mach: f64, reynolds_millions: f64, alpha_deg: f64) -> Self {
        FlightCondition {
            mach,
            reynolds_millions,
            alpha_deg,
        }
    }

    pub fn alpha_rad(&self) -> f64 {
        self.alpha_deg.to_radians()
    }
}

/// One fidelity source: expected field values and their variance.
#[derive(Clone, Debug)]
pub struct FieldSample {
    pub values: DVector<f64>,
    pub variance: f64,
    pub fidelity: Fidelity,
    pub condition: FlightCondition,
}

impl FieldSample {
    pub fn new(values: DVector<f64>, variance: f64, fidelity: Fidelity, condition: FlightCondition) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(FuseError::arg(format!("variance must be >= 0, got {variance}")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FuseError::Data(format!("field value {i} is not finite")));
        }
        Ok(FieldSample {
            values,
            variance,
            fidelity,
            condition,
        })
    }
}

/// Least-squares fusion weight: the `theta` in `[0, 1]` minimising
/// `|H^T (theta mu1 + (1 - theta) mu2) + delta - z|^2`.
///
/// The objective is a one-dimensional quadratic, solved in closed form and
/// clamped to the unit interval. Returns 0.5 when both sources give the same
/// QoIs.
pub fn estimate_theta(mu1: &DVector<f64>, mu2: &DVector<f64>, op: &OutputOperator, z: &DVector<f64>) -> Result<f64> {
    check_len("mu1", mu1.len(), op.cells())?;
    check_len("mu2", mu2.len(), op.cells())?;
    check_len("z", z.len(), op.qois())?;
    let a = op.apply(mu1)?;
    let b = op.apply(mu2)?;
    let diff = &a - &b;
    let denom = diff.norm_squared();
    if denom < THETA_DEGENERATE {
        return Ok(0.5);
    }
    let theta = diff.dot(&(z - &b)) / denom;
    Ok(theta.clamp(0.0, 1.0))
}

/// `theta mu1 + (1 - theta) mu2`.
pub fn fuse_prior_mean(mu1: &DVector<f64>, mu2: &DVector<f64>, theta: f64) -> Result<DVector<f64>> {
    check_theta(theta)?;
    check_len("mu2", mu2.len(), mu1.len())?;
    Ok(mu1 * theta + mu2 * (1.0 - theta))
}

/// Variance of the fused mean for independent sources:
/// `theta^2 sigma1^2 + (1 - theta)^2 sigma2^2`.
pub fn combined_variance(theta: f64, sigma1_sq: f64, sigma2_sq: f64) -> Result<f64> {
    check_theta(theta)?;
    if !(sigma1_sq >= 0.0 && sigma2_sq >= 0.0) {
        return Err(FuseError::arg("variances must be non-negative"));
    }
    Ok(theta * theta * sigma1_sq + (1.0 - theta) * (1.0 - theta) * sigma2_sq)
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(FuseError::arg(format!("theta must lie in [0, 1], got {theta}")));
    }
    Ok(())
}

/// Prior covariance over the cells of a grid.
///
/// The kernel form is never materialised unless asked for, so products with
/// thin matrices stay `O(n^2)` time and `O(n)` memory.
#[derive(Clone, Debug)]
pub enum Covariance {
    /// `variance * exp(-|x_i - x_j|^2 / (2 length_scale^2)) + nugget * variance * [i = j]`.
    SquaredExponential {
        centers: Vec<Point>,
        variance: f64,
        length_scale: f64,
        nugget: f64,
    },
    /// An explicit symmetric positive-definite matrix.
    Dense(DMatrix<f64>),
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::SquaredExponential { centers, .. } => centers.len(),
            Covariance::Dense(m) => m.nrows(),
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match self {
            Covariance::SquaredExponential {
                centers,
                variance,
                length_scale,
                nugget,
            } => {
                let d2 = (centers[i] - centers[j]).norm_squared();
                let k = variance * (-d2 / (2.0 * length_scale * length_scale)).exp();
                if i == j {
                    k + nugget * variance
                } else {
                    k
                }
            }
            Covariance::Dense(m) => m[(i, j)],
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| self.entry(i, i))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Covariance::Dense(m) => m.clone(),
            _ => {
                let n = self.dim();
                let mut out = DMatrix::zeros(n, n);
                for j in 0..n {
                    for i in j..n {
                        let v = self.entry(i, j);
                        out[(i, j)] = v;
                        out[(j, i)] = v;
                    }
                }
                out
            }
        }
    }

    /// `Sigma * b` for a thin `n x m` matrix `b`.
    pub fn mul(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Covariance::Dense(m) => m * b,
            _ => {
                let n = self.dim();
                let cols = b.ncols();
                let rows: Vec<Vec<f64>> = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let mut acc = vec![0.0; cols];
                        for j in 0..n {
                            let k = self.entry(i, j);
                            if k != 0.0 {
                                for (c, a) in acc.iter_mut().enumerate() {
                                    *a += k * b[(j, c)];
                                }
                            }
                        }
                        acc
                    })
                    .collect();
                DMatrix::from_fn(n, cols, |i, c| rows[i][c])
            }
        }
    }

    /// Dense Cholesky factor; fails when the matrix is not numerically
    /// positive definite.
    pub fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.to_dense()).ok_or_else(|| {
            FuseError::numerical(
                "prior covariance is not positive definite; increase the nugget or reduce the length scale",
            )
        })
    }
}

/// Squared-exponential covariance over the cell centers of `grid`.
///
/// Grids up to [`DENSE_CHECK_LIMIT`] cells are factorised once here so an
/// ill-conditioned kernel is reported immediately.
pub fn prior_covariance(grid: &SurfaceGrid, variance: f64, length_scale: f64, nugget: f64) -> Result<Covariance> {
    if !(length_scale > 0.0) || !length_scale.is_finite() {
        return Err(FuseError::arg(format!(
            "length scale must be positive, got {length_scale}"
        )));
    }
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(FuseError::arg(format!(
            "prior variance must be positive, got {variance}"
        )));
    }
    if !(nugget >= 0.0) {
        return Err(FuseError::arg(format!("nugget must be non-negative, got {nugget}")));
    }
    let cov = Covariance::SquaredExponential {
        centers: grid.centers().to_vec(),
        variance,
        length_scale,
        nugget,
    };
    if grid.len() <= DENSE_CHECK_LIMIT {
        cov.cholesky()?;
    }
    Ok(cov)
}

/// Largest grid for which [`prior_covariance`] verifies factorisability eagerly.
pub const DENSE_CHECK_LIMIT: usize = 2000;

/// Gaussian prior `N(mean, covariance)` together with the settings that built it.
#[derive(Clone, Debug)]
pub struct PriorSpec {
    pub mean: DVector<f64>,
    pub covariance: Covariance,
    pub theta: f64,
    pub length_scale: f64,
    pub nugget: f64,
}

impl PriorSpec {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Hyperparameters of the Bayesian fusion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    /// Variance of the first source (measurement).
    pub sigma1_sq: f64,
    /// Variance of the second source (simulation).
    pub sigma2_sq: f64,
    /// QoI measurement noise variance.
    pub tau2: f64,
    /// Kernel length scale, in grid coordinates.
    pub ell: f64,
    /// Diagonal inflation relative to the prior variance.
    pub nugget: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters::airfoil()
    }
}

impl Hyperparameters {
    /// Settings for chord-normalised two-dimensional sections.
    pub fn airfoil() -> Self {
        Hyperparameters {
            sigma1_sq: 1e-2,
            sigma2_sq: 1e-2,
            tau2: 1e-6,
            ell: 1e-4,
            nugget: DEFAULT_NUGGET,
        }
    }

    /// Settings for three-dimensional surfaces.
    pub fn surface() -> Self {
        Hyperparameters {
            ell: 0.01,
            ..Hyperparameters::airfoil()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma1_sq", self.sigma1_sq),
            ("sigma2_sq", self.sigma2_sq),
            ("tau2", self.tau2),
            ("ell", self.ell),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(FuseError::arg(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.nugget >= 0.0) || !self.nugget.is_finite() {
            return Err(FuseError::arg(format!(
                "nugget must be non-negative, got {}",
                self.nugget
            )));
        }
        Ok(())
    }
}

/// Builds the full sample-based prior for `grid`: fused mean at `theta` and
/// squared-exponential covariance with the combined variance.
pub fn build_prior(
    grid: &SurfaceGrid,
    mu1: &DVector<f64>,
    mu2: &DVector<f64>,
    theta: f64,
    hyper: &Hyperparameters,
) -> Result<PriorSpec> {
    check_len("mu1", mu1.len(), grid.len())?;
    let mean = fuse_prior_mean(mu1, mu2, theta)?;
    let variance = combined_variance(theta, hyper.sigma1_sq, hyper.sigma2_sq)?;
    let covariance = prior_covariance(grid, variance, hyper.ell, hyper.nugget)?;
    Ok(PriorSpec {
        mean,
        covariance,
        theta,
        length_scale: hyper.ell,
        nugget: hyper.nugget,
    })
}

/// `count` draws from the prior, one per row. Deterministic in `seed`.
pub fn sample_prior(spec: &PriorSpec, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    let chol = spec.covariance.cholesky()?;
    Ok(gaussian_draws(&spec.mean, chol.l_dirty(), count, seed))
}

/// Rows of `mean + L xi` with `xi` standard normal. Only the lower triangle
/// of `l` is read.
pub(crate) fn gaussian_draws(mean: &DVector<f64>, l: &DMatrix<f64>, count: usize, seed: u64) -> DMatrix<f64> {
    let n = mean.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(count, n);
    let mut xi = DVector::<f64>::zeros(n);
    for r in 0..count {
        for v in xi.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        for i in 0..n {
            let mut acc = mean[i];
            for j in 0..=i {
                acc += l[(i, j)] * xi[j];
            }
            out[(r, i)] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_airfoil_grid, build_output_operator, naca4, Qoi, Reference, Topology};
    use rand::Rng;

    fn setup() -> (SurfaceGrid, OutputOperator) {
        let (u, l) = naca4(0.02, 0.4, 0.12, 201);
        let g = build_airfoil_grid(&u, &l, 64).unwrap();
        let op = build_output_operator(&g, 0.03, &[Qoi::Lift, Qoi::Moment]).unwrap();
        (g, op)
    }

    fn random_field(n: usize, rng: &mut impl Rng) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn theta_recovers_exact_sources() {
        let (_, op) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mu1 = random_field(64, &mut rng);
        let mu2 = random_field(64, &mut rng);
        let z1 = op.apply(&mu1).unwrap();
        let z2 = op.apply(&mu2).unwrap();
        assert!((estimate_theta(&mu1, &mu2, &op, &z1).unwrap() - 1.0).abs() < 1e-12);
        assert!(estimate_theta(&mu1, &mu2, &op, &z2).unwrap().abs() < 1e-12);
    }

    #[test]
    fn theta_midpoint() {
        // a = (1, 0), b = (0, 0), z = (0.5, 0)
        let h = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let op = OutputOperator::from_matrix(h, vec!["a".into(), "b".into()], 0.0).unwrap();
        let mu1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let mu2 = DVector::zeros(3);
        let z = DVector::from_vec(vec![0.5, 0.0]);
        assert!((estimate_theta(&mu1, &mu2, &op, &z).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(estimate_theta(&mu2, &mu2, &op, &z).unwrap(), 0.5);
    }

    #[test]
    fn theta_matches_grid_search() {
        let (_, op) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mu1 = random_field(64, &mut rng);
            let mu2 = random_field(64, &mut rng);
            let z = DVector::from_fn(2, |_, _| rng.random_range(-0.2..0.2));
            let theta = estimate_theta(&mu1, &mu2, &op, &z).unwrap();
            let cost = |t: f64| (op.apply(&(&mu1 * t + &mu2 * (1.0 - t))).unwrap() - &z).norm_squared();
            let best = (0..=1000)
                .map(|i| i as f64 / 1000.0)
                .min_by(|a, b| cost(*a).total_cmp(&cost(*b)))
                .unwrap();
            assert!((theta - best).abs() <= 1e-3 + 1e-12, "{theta} vs {best}");
            for _ in 0..100 {
                let t: f64 = rng.random();
                assert!(cost(theta) <= cost(t) + 1e-15);
            }
        }
    }

    #[test]
    fn fused_mean_and_variance() {
        let a = DVector::from_vec(vec![1.0, 2.0]);
        let b = DVector::from_vec(vec![3.0, -1.0]);
        assert_eq!(fuse_prior_mean(&a, &b, 1.0).unwrap(), a);
        assert_eq!(fuse_prior_mean(&a, &b, 0.0).unwrap(), b);
        assert_eq!(fuse_prior_mean(&a, &a, 0.37).unwrap(), a);
        assert!(fuse_prior_mean(&a, &b, 1.2).is_err());
        assert_eq!(combined_variance(0.0, 0.3, 0.7).unwrap(), 0.7);
        assert_eq!(combined_variance(1.0, 0.3, 0.7).unwrap(), 0.3);
        assert!((combined_variance(0.5, 0.01, 0.01).unwrap() - 0.005).abs() < 1e-18);
    }

    fn line(xs: &[f64]) -> SurfaceGrid {
        SurfaceGrid::from_cells(
            xs.iter().map(|x| Point::new(*x, 0.0, 0.0)).collect(),
            vec![Point::new(0.0, 0.0, 1.0); xs.len()],
            vec![1.0; xs.len()],
            Topology::OpenCurve,
            Reference::default(),
        )
        .unwrap()
    }

    #[test]
    fn kernel_values() {
        let g = line(&[0.0, 0.3, 0.6]);
        let cov = prior_covariance(&g, 2.0, 0.3, 1e-10).unwrap();
        assert!((cov.entry(0, 0) - 2.0 * (1.0 + 1e-10)).abs() < 1e-15);
        assert!((cov.entry(0, 1) - 2.0 * (-0.5f64).exp()).abs() < 1e-15);
        assert!((cov.entry(0, 1) / 2.0 - 0.6065).abs() < 1e-4);
        let dense = cov.to_dense();
        assert_eq!(dense, dense.transpose());
    }

    #[test]
    fn tiny_length_scale_is_diagonal() {
        let xs: Vec<f64> = (0..128).map(|i| (i as f64 + 0.5) / 128.0).collect();
        let cov = prior_covariance(&line(&xs), 0.01, 1e-4, 1e-10).unwrap();
        let d = cov.to_dense();
        for i in 0..128 {
            for j in 0..128 {
                if i != j {
                    assert!(d[(i, j)].abs() < 1e-300 * 0.01);
                }
            }
        }
    }

    #[test]
    fn kernel_is_stationary_under_permutation() {
        let xs = [0.1, 0.45, 0.2, 0.9];
        let perm = [2, 0, 3, 1];
        let a = prior_covariance(&line(&xs), 1.0, 0.2, 0.0).unwrap();
        let permuted: Vec<f64> = perm.iter().map(|&p| xs[p]).collect();
        let b = prior_covariance(&line(&permuted), 1.0, 0.2, 0.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(b.entry(i, j), a.entry(perm[i], perm[j]));
            }
        }
    }

    #[test]
    fn ill_conditioned_kernel_reports_nugget() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64 / 200.0).collect();
        let err = prior_covariance(&line(&xs), 1.0, 10.0, 0.0).unwrap_err();
        assert!(matches!(err, FuseError::Numerical(ref m) if m.contains("nugget")));
        assert!(prior_covariance(&line(&xs), 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn kernel_product_matches_dense() {
        let (g, op) = setup();
        let cov = prior_covariance(&g, 0.01, 0.1, 1e-8).unwrap();
        let fast = cov.mul(op.matrix());
        let slow = cov.to_dense() * op.matrix();
        assert!((fast - slow).amax() < 1e-15);
    }

    #[test]
    fn prior_draws() {
        let xs: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let g = line(&xs);
        let mean = DVector::from_fn(8, |i, _| i as f64 * 0.2 - 0.5);
        let spec = PriorSpec {
            mean: mean.clone(),
            covariance: prior_covariance(&g, 0.04, 1e-4, 0.0).unwrap(),
            theta: 0.5,
            length_scale: 1e-4,
            nugget: 0.0,
        };
        let count = 10_000;
        let draws = sample_prior(&spec, count, 99).unwrap();
        assert_eq!(draws, sample_prior(&spec, count, 99).unwrap());
        assert_ne!(draws, sample_prior(&spec, count, 100).unwrap());
        let sigma = 0.2;
        for i in 0..8 {
            let col = draws.column(i);
            let m = col.mean();
            assert!((m - mean[i]).abs() <= 4.0 * sigma / (count as f64).sqrt());
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (count - 1) as f64;
            assert!((var / 0.04 - 1.0).abs() < 0.1, "{var}");
        }
    }
}
