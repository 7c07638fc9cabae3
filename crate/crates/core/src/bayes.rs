//! Closed-form Bayesian fusion for the linear-Gaussian model
//! `z = H^T y + delta + eps`, `eps ~ N(0, tau2 I)`, `y ~ N(mu, Sigma)`.
//!
//! The posterior is Gaussian with precision `A = H H^T / tau2 + Sigma^-1`.
//! Two solution routes are provided:
//!
//! * [`SolveStrategy::Precision`] factors `A` by Cholesky and reuses the
//!   factor for the mean, the variance diagonal and the full covariance.
//! * [`SolveStrategy::LowRank`] never forms an `n x n` inverse: with
//!   `S = tau2 I + H^T Sigma H` (only `m x m`) the same posterior is
//!   `mean = mu + Sigma H S^-1 (z - delta - H^T mu)` and
//!   `Gamma = Sigma - Sigma H S^-1 H^T Sigma`. Cost is `O(n^2 m)` and memory
//!   `O(n m)` when only the diagonal is requested.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, FuseError, Result};
use crate::geometry::{OutputOperator, SurfaceGrid};
use crate::prior::{build_prior, estimate_theta, gaussian_draws, Hyperparameters, PriorSpec};
use crate::stats::normal_quantile;

/// Above this many cells only the variance diagonal is kept by default.
pub const DIAG_ONLY_THRESHOLD: usize = 2000;
/// Relative residual accepted for the precision-route solve.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-8;

/// Measured QoIs and their noise variance.
#[derive(Clone, Debug)]
pub struct QoiMeasurement {
    pub z: DVector<f64>,
    pub noise_variance: f64,
}

impl QoiMeasurement {
    pub fn new(z: DVector<f64>, noise_variance: f64) -> Result<Self> {
        if !(noise_variance > 0.0) || !noise_variance.is_finite() {
            return Err(FuseError::arg(format!(
                "noise variance must be positive, got {noise_variance}"
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(FuseError::Data("measured QoIs must be finite".into()));
        }
        Ok(QoiMeasurement { z, noise_variance })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStrategy {
    /// Precision route up to [`DIAG_ONLY_THRESHOLD`] cells, low-rank beyond.
    #[default]
    Auto,
    Precision,
    LowRank,
}

impl SolveStrategy {
    fn resolve(self, n: usize) -> SolveStrategy {
        match self {
            SolveStrategy::Auto if n <= DIAG_ONLY_THRESHOLD => SolveStrategy::Precision,
            SolveStrategy::Auto => SolveStrategy::LowRank,
            s => s,
        }
    }
}

enum Factor {
    Precision {
        sigma: Cholesky<f64, Dyn>,
        precision: DMatrix<f64>,
        factor: Cholesky<f64, Dyn>,
    },
    LowRank {
        sigma_h: DMatrix<f64>,
        small: Cholesky<f64, Dyn>,
    },
}

/// Factorised posterior for one operator, prior and noise level.
pub struct PosteriorFactor<'a> {
    op: &'a OutputOperator,
    prior: &'a PriorSpec,
    tau2: f64,
    factor: Factor,
}

impl<'a> PosteriorFactor<'a> {
    pub fn new(op: &'a OutputOperator, prior: &'a PriorSpec, tau2: f64, strategy: SolveStrategy) -> Result<Self> {
        check_len("prior mean", prior.dim(), op.cells())?;
        check_len("prior covariance", prior.covariance.dim(), op.cells())?;
        if !(tau2 > 0.0) || !tau2.is_finite() {
            return Err(FuseError::arg(format!("tau2 must be positive, got {tau2}")));
        }
        let h = op.matrix();
        let factor = match strategy.resolve(op.cells()) {
            SolveStrategy::LowRank => {
                let sigma_h = prior.covariance.mul(h);
                let mut s = h.tr_mul(&sigma_h);
                symmetrize(&mut s);
                for i in 0..s.nrows() {
                    s[(i, i)] += tau2;
                }
                let small = Cholesky::new(s).ok_or_else(|| {
                    FuseError::numerical("QoI-space covariance H^T Sigma H + tau2 I is not positive definite")
                })?;
                Factor::LowRank { sigma_h, small }
            }
            _ => {
                let sigma = prior.covariance.cholesky()?;
                let mut precision = sigma.inverse();
                precision += (h * h.transpose()) / tau2;
                symmetrize(&mut precision);
                let factor = Cholesky::new(precision.clone())
                    .ok_or_else(|| FuseError::numerical("posterior precision is not positive definite"))?;
                Factor::Precision {
                    sigma,
                    precision,
                    factor,
                }
            }
        };
        Ok(PosteriorFactor {
            op,
            prior,
            tau2,
            factor,
        })
    }

    pub fn strategy(&self) -> SolveStrategy {
        match self.factor {
            Factor::Precision { .. } => SolveStrategy::Precision,
            Factor::LowRank { .. } => SolveStrategy::LowRank,
        }
    }

    /// Posterior mean (equal to the MAP estimate) for measurement `z`, and
    /// the relative residual of the precision system when that route is used.
    pub fn map(&self, z: &DVector<f64>) -> Result<(DVector<f64>, Option<f64>)> {
        check_len("z", z.len(), self.op.qois())?;
        let shifted = z - self.op.offset();
        let mu = &self.prior.mean;
        match &self.factor {
            Factor::Precision {
                sigma,
                precision,
                factor,
            } => {
                let rhs = self.op.matrix() * &shifted / self.tau2 + sigma.solve(mu);
                let mut y = factor.solve(&rhs);
                let rhs_norm = rhs.norm().max(f64::MIN_POSITIVE);
                let mut residual = (precision * &y - &rhs).norm() / rhs_norm;
                if residual > SOLVE_RESIDUAL_TOL {
                    // one step of iterative refinement
                    let correction = factor.solve(&(&rhs - precision * &y));
                    y += correction;
                    residual = (precision * &y - &rhs).norm() / rhs_norm;
                }
                if residual > SOLVE_RESIDUAL_TOL || y.iter().any(|v| !v.is_finite()) {
                    return Err(FuseError::numerical(format!(
                        "MAP solve residual {residual:e} exceeds {SOLVE_RESIDUAL_TOL:e}; the prior covariance is too ill-conditioned"
                    )));
                }
                Ok((y, Some(residual)))
            }
            Factor::LowRank { sigma_h, small } => {
                let r = shifted - self.op.integrate(mu);
                let y = mu + sigma_h * small.solve(&r);
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(FuseError::numerical("MAP estimate is not finite"));
                }
                Ok((y, None))
            }
        }
    }

    /// Diagonal of the posterior covariance.
    pub fn variance_diagonal(&self) -> DVector<f64> {
        match &self.factor {
            Factor::Precision { factor, .. } => {
                // diag(A^-1) = squared column norms of L^-1
                let n = self.op.cells();
                let l = factor.l();
                let mut linv = DMatrix::identity(n, n);
                l.solve_lower_triangular_mut(&mut linv);
                DVector::from_fn(n, |i, _| linv.column(i).norm_squared())
            }
            Factor::LowRank { sigma_h, small } => {
                let w = small.solve(&sigma_h.transpose());
                let prior_diag = self.prior.covariance.diagonal();
                DVector::from_fn(self.op.cells(), |i, _| {
                    let reduction = sigma_h.row(i).dot(&w.column(i).transpose());
                    (prior_diag[i] - reduction).max(0.0)
                })
            }
        }
    }

    /// Full posterior covariance `Gamma`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mut gamma = match &self.factor {
            Factor::Precision { factor, .. } => factor.inverse(),
            Factor::LowRank { sigma_h, small } => {
                let w = small.solve(&sigma_h.transpose());
                self.prior.covariance.to_dense() - sigma_h * w
            }
        };
        symmetrize(&mut gamma);
        gamma
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in j + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// MAP estimate of the field given measured QoIs.
pub fn map_estimate(z: &QoiMeasurement, op: &OutputOperator, prior: &PriorSpec) -> Result<DVector<f64>> {
    let factor = PosteriorFactor::new(op, prior, z.noise_variance, SolveStrategy::Auto)?;
    Ok(factor.map(&z.z)?.0)
}

/// Posterior covariance, full or diagonal only.
#[derive(Clone, Debug)]
pub enum PosteriorCovariance {
    Full(DMatrix<f64>),
    Diagonal(DVector<f64>),
}

impl PosteriorCovariance {
    pub fn diagonal(&self) -> DVector<f64> {
        match self {
            PosteriorCovariance::Full(m) => m.diagonal(),
            PosteriorCovariance::Diagonal(d) => d.clone(),
        }
    }
}

pub fn posterior_covariance(
    op: &OutputOperator,
    tau2: f64,
    prior: &PriorSpec,
    diag_only: bool,
) -> Result<PosteriorCovariance> {
    let factor = PosteriorFactor::new(op, prior, tau2, SolveStrategy::Auto)?;
    Ok(if diag_only {
        PosteriorCovariance::Diagonal(factor.variance_diagonal())
    } else {
        PosteriorCovariance::Full(factor.covariance())
    })
}

/// Output of [`run_bayesian_fusion`].
#[derive(Clone, Debug)]
pub struct BayesResult {
    pub y_map: DVector<f64>,
    /// Pointwise posterior variance, `diag(Gamma)`.
    pub posterior_var: DVector<f64>,
    pub full_cov: Option<DMatrix<f64>>,
    pub theta: f64,
    pub prior_mean: DVector<f64>,
    pub prior_var: DVector<f64>,
    /// `H^T y_map + delta`.
    pub qoi_fit: DVector<f64>,
    /// `|z - qoi_fit|`.
    pub misfit: f64,
    pub strategy: SolveStrategy,
    pub solve_residual: Option<f64>,
}

impl BayesResult {
    pub fn std(&self) -> DVector<f64> {
        self.posterior_var.map(f64::sqrt)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BayesOptions {
    /// Fixed fusion weight instead of the least-squares estimate.
    pub theta: Option<f64>,
    /// Keep only the variance diagonal. Defaults to `n > DIAG_ONLY_THRESHOLD`.
    pub diag_only: Option<bool>,
    pub strategy: SolveStrategy,
}

/// Full Bayesian fusion: estimate the fusion weight, build the prior, then
/// compute the MAP field and its posterior variance.
///
/// `mu1` is the measurement-side source and `mu2` the simulation-side one,
/// matching `sigma1_sq` and `sigma2_sq` in `hyper`.
pub fn run_bayesian_fusion(
    mu1: &DVector<f64>,
    mu2: &DVector<f64>,
    z: &DVector<f64>,
    op: &OutputOperator,
    grid: &SurfaceGrid,
    hyper: &Hyperparameters,
    options: &BayesOptions,
) -> Result<BayesResult> {
    hyper.validate()?;
    check_len("grid", grid.len(), op.cells())?;
    let theta = match options.theta {
        Some(t) if (0.0..=1.0).contains(&t) => t,
        Some(t) => return Err(FuseError::arg(format!("theta override must lie in [0, 1], got {t}"))),
        None => estimate_theta(mu1, mu2, op, z)?,
    };
    let prior = build_prior(grid, mu1, mu2, theta, hyper)?;
    let factor = PosteriorFactor::new(op, &prior, hyper.tau2, options.strategy)?;
    let (y_map, solve_residual) = factor.map(z)?;
    let diag_only = options.diag_only.unwrap_or(op.cells() > DIAG_ONLY_THRESHOLD);
    let (posterior_var, full_cov) = if diag_only {
        (factor.variance_diagonal(), None)
    } else {
        let gamma = factor.covariance();
        (gamma.diagonal().map(|v| v.max(0.0)), Some(gamma))
    };
    let qoi_fit = op.apply(&y_map)?;
    let misfit = (z - &qoi_fit).norm();
    Ok(BayesResult {
        strategy: factor.strategy(),
        prior_var: prior.covariance.diagonal(),
        prior_mean: prior.mean,
        y_map,
        posterior_var,
        full_cov,
        theta,
        qoi_fit,
        misfit,
        solve_residual,
    })
}

/// Pointwise bands `y_map -/+ q sqrt(diag Gamma)`.
pub fn confidence_bands(result: &BayesResult, level: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    let q = normal_quantile(level)?;
    let half = result.std() * q;
    Ok((&result.y_map - &half, &result.y_map + &half))
}

/// `count` draws from the posterior, one per row; needs the full covariance.
pub fn sample_posterior(result: &BayesResult, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    let gamma = result
        .full_cov
        .as_ref()
        .ok_or_else(|| FuseError::arg("posterior sampling needs the full covariance; rerun without diag_only"))?;
    let l = cholesky_with_jitter(gamma)?;
    Ok(gaussian_draws(&result.y_map, &l, count, seed))
}

/// Cholesky factor of a covariance that may be singular to rounding; adds
/// growing diagonal jitter up to `1e-8` of the largest variance.
pub(crate) fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c.unpack());
    }
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut jitter = 1e-14 * scale;
    while jitter <= 1e-8 * scale {
        let mut shifted = m.clone();
        for i in 0..m.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(shifted) {
            return Ok(c.unpack());
        }
        jitter *= 10.0;
    }
    Err(FuseError::numerical("covariance is not positive semi-definite"))
}
