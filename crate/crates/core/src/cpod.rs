//! Constrained proper orthogonal decomposition.
//!
//! A POD basis is extracted from a bank of snapshots; the fused field is the
//! member of the truncated subspace closest to a blended initial guess that
//! reproduces the measured QoIs exactly. The basis is enriched with the
//! current iterate and the fit repeated until the cost settles.

use nalgebra::{DMatrix, DVector, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, FuseError, Result};
use crate::geometry::OutputOperator;
use crate::prior::{Fidelity, FieldSample, FlightCondition};
use crate::stats::t_quantile;

/// Default energy fraction kept by [`truncate_rank`].
pub const ENERGY_TARGET: f64 = 0.99;
/// Relative tolerance for the KKT residual.
pub const KKT_RESIDUAL_TOL: f64 = 1e-10;
const CONSTRAINT_RANK_TOL: f64 = 1e-10;

/// Snapshot matrix `U` (one field per column) with its provenance.
#[derive(Clone, Debug)]
pub struct SnapshotSet {
    u: DMatrix<f64>,
    conditions: Vec<FlightCondition>,
    fidelities: Vec<Fidelity>,
}

impl SnapshotSet {
    pub fn new(u: DMatrix<f64>, conditions: Vec<FlightCondition>, fidelities: Vec<Fidelity>) -> Result<Self> {
        let q = u.ncols();
        if q < 2 {
            return Err(FuseError::arg(format!(
                "a snapshot bank needs at least 2 columns, got {q}"
            )));
        }
        check_len("snapshot conditions", conditions.len(), q)?;
        check_len("snapshot fidelities", fidelities.len(), q)?;
        if let Some(pos) = u.iter().position(|v| !v.is_finite()) {
            return Err(FuseError::Data(format!(
                "snapshot {} has a non-finite entry at cell {}; impute gaps first",
                pos / u.nrows(),
                pos % u.nrows()
            )));
        }
        Ok(SnapshotSet {
            u,
            conditions,
            fidelities,
        })
    }

    pub fn from_samples(samples: &[FieldSample]) -> Result<Self> {
        let n = samples.first().map_or(0, |s| s.values.len());
        for s in samples {
            check_len("snapshot", s.values.len(), n)?;
        }
        let u = DMatrix::from_fn(n, samples.len(), |i, j| samples[j].values[i]);
        SnapshotSet::new(
            u,
            samples.iter().map(|s| s.condition).collect(),
            samples.iter().map(|s| s.fidelity).collect(),
        )
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn conditions(&self) -> &[FlightCondition] {
        &self.conditions
    }

    pub fn fidelities(&self) -> &[Fidelity] {
        &self.fidelities
    }

    pub fn cells(&self) -> usize {
        self.u.nrows()
    }

    pub fn len(&self) -> usize {
        self.u.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.u.ncols() == 0
    }
}

/// Left singular vectors of a snapshot matrix and the singular values.
#[derive(Clone, Debug)]
pub struct PodBasis {
    modes: DMatrix<f64>,
    /// All singular values, nonincreasing.
    pub singular_values: DVector<f64>,
    /// Retained rank.
    pub k: usize,
    /// `sum(d[..k]) / sum(d)`.
    pub energy_fraction: f64,
}

impl PodBasis {
    /// The retained modes `Phi_k` (`n x k`).
    pub fn modes(&self) -> nalgebra::DMatrixView<'_, f64> {
        self.modes.columns(0, self.k)
    }

    /// All computed modes, `n x min(n, q)`.
    pub fn all_modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    /// Keeps the first `k` modes.
    pub fn with_rank(mut self, k: usize) -> Result<Self> {
        if k == 0 || k > self.modes.ncols() {
            return Err(FuseError::arg(format!("rank {k} outside 1..={}", self.modes.ncols())));
        }
        self.k = k;
        self.energy_fraction = energy(&self.singular_values, k);
        Ok(self)
    }

    /// `|Phi_k^T Phi_k - I|_max`.
    pub fn orthonormality_error(&self) -> f64 {
        let phi = self.modes();
        (phi.transpose() * phi - DMatrix::identity(self.k, self.k)).amax()
    }
}

fn energy(d: &DVector<f64>, k: usize) -> f64 {
    let total: f64 = d.sum();
    if total > 0.0 {
        d.rows(0, k).sum() / total
    } else {
        0.0
    }
}

/// Thin SVD of the snapshot matrix; the returned basis keeps every mode.
pub fn compute_pod(snapshots: &SnapshotSet) -> Result<PodBasis> {
    pod_of_matrix(snapshots.matrix())
}

/// [`compute_pod`] on a bare matrix.
pub fn pod_of_matrix(u: &DMatrix<f64>) -> Result<PodBasis> {
    if u.ncols() == 0 || u.nrows() == 0 {
        return Err(FuseError::arg("empty snapshot matrix"));
    }
    let svd = SVD::try_new(u.clone(), true, false, f64::EPSILON, 10_000)
        .ok_or_else(|| FuseError::numerical("SVD of the snapshot matrix did not converge"))?;
    let left = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let d = DVector::from_iterator(order.len(), order.iter().map(|&i| svd.singular_values[i]));
    let modes = DMatrix::from_columns(&order.iter().map(|&i| left.column(i)).collect::<Vec<_>>());
    let k = d.len();
    Ok(PodBasis {
        modes,
        singular_values: d,
        k,
        energy_fraction: 1.0,
    })
}

/// Smallest `k` whose leading singular values carry at least `target` of
/// their sum (first powers, not squares).
pub fn truncate_rank(d: &DVector<f64>, target: f64) -> Result<usize> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(FuseError::arg(format!(
            "energy target must lie in (0, 1], got {target}"
        )));
    }
    if d.iter().any(|v| !(*v >= 0.0)) {
        return Err(FuseError::Data("singular values must be nonnegative".into()));
    }
    let total: f64 = d.sum();
    if total <= 0.0 {
        return Err(FuseError::Data("all singular values are zero".into()));
    }
    let mut acc = 0.0;
    for (i, v) in d.iter().enumerate() {
        acc += v;
        // guards against rounding on exact boundaries like (0.99, 0.01)
        if acc >= target * total - 1e-12 * total {
            return Ok(i + 1);
        }
    }
    Ok(d.len())
}

/// Solution of the KKT system.
#[derive(Clone, Debug)]
pub struct KktSolution {
    pub a: DVector<f64>,
    pub lambda: DVector<f64>,
    /// `|K x - rhs| / |rhs|`.
    pub residual: f64,
}

/// Closest point to `u_guess` in `span(Phi_k)` that reproduces `z`.
///
/// Solves `[[I, Phi^T H], [H^T Phi, 0]] [a; lambda] = [Phi^T u; z - delta]`.
pub fn solve_kkt(
    phi: nalgebra::DMatrixView<'_, f64>,
    op: &OutputOperator,
    z: &DVector<f64>,
    u_guess: &DVector<f64>,
) -> Result<KktSolution> {
    check_len("z", z.len(), op.qois())?;
    solve_kkt_matrix(phi, op.matrix(), op.names(), &(z - op.offset()), u_guess)
}

/// [`solve_kkt`] with a bare `n x m` weight matrix and offset-free targets.
/// `H` is not required to have full rank; dependent constraints are
/// reported as [`FuseError::Infeasible`] naming the QoI.
pub fn solve_kkt_matrix(
    phi: nalgebra::DMatrixView<'_, f64>,
    h: &DMatrix<f64>,
    names: &[String],
    target: &DVector<f64>,
    u_guess: &DVector<f64>,
) -> Result<KktSolution> {
    let (n, k) = phi.shape();
    let m = h.ncols();
    check_len("basis", n, h.nrows())?;
    check_len("QoI names", names.len(), m)?;
    check_len("u_guess", u_guess.len(), n)?;
    check_len("z", target.len(), m)?;
    if k < m {
        return Err(FuseError::arg(format!(
            "reduced basis has {k} modes but {m} QoI constraints"
        )));
    }
    let b = h.tr_mul(&phi); // m x k
    check_constraint_rank(&b, names)?;

    let size = k + m;
    let mut kkt = DMatrix::zeros(size, size);
    kkt.view_mut((0, 0), (k, k)).fill_with_identity();
    kkt.view_mut((0, k), (k, m)).copy_from(&b.transpose());
    kkt.view_mut((k, 0), (m, k)).copy_from(&b);
    let mut rhs = DVector::zeros(size);
    rhs.rows_mut(0, k).copy_from(&phi.tr_mul(u_guess));
    rhs.rows_mut(k, m).copy_from(target);

    let lu = kkt.clone().lu();
    let mut x = lu
        .solve(&rhs)
        .ok_or_else(|| FuseError::numerical("KKT matrix is singular"))?;
    if let Some(dx) = lu.solve(&(&rhs - &kkt * &x)) {
        x += dx;
    }
    let scale = rhs.norm().max(f64::MIN_POSITIVE);
    let residual = (&kkt * &x - &rhs).norm() / scale;
    if !(residual <= KKT_RESIDUAL_TOL) {
        return Err(FuseError::numerical(format!(
            "KKT residual {residual:e} exceeds {KKT_RESIDUAL_TOL:e}"
        )));
    }
    Ok(KktSolution {
        a: x.rows(0, k).into_owned(),
        lambda: x.rows(k, m).into_owned(),
        residual,
    })
}

/// Rows of `H^T Phi_k` must be independent. Gram-Schmidt in QoI order
/// names the first row that depends on the ones before it.
fn check_constraint_rank(b: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let scale = b.amax();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let mut r: DVector<f64> = b.row(i).transpose();
        let norm0 = r.norm();
        for q in &basis {
            let c = q.dot(&r);
            r.axpy(-c, q, 1.0);
        }
        let norm = r.norm();
        if !(norm > CONSTRAINT_RANK_TOL * scale) || !(norm > CONSTRAINT_RANK_TOL * norm0) {
            return Err(FuseError::Infeasible { qoi: name.clone() });
        }
        basis.push(r / norm);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CpodOptions {
    /// Window length of the stopping rule.
    pub c: usize,
    /// Threshold on the cost dispersion over the window.
    pub eps_c: f64,
    pub max_iter: usize,
    /// Energy fraction kept at every truncation.
    pub energy: f64,
}

impl Default for CpodOptions {
    fn default() -> Self {
        CpodOptions {
            c: 5,
            eps_c: 1e-6,
            max_iter: 50,
            energy: ENERGY_TARGET,
        }
    }
}

impl CpodOptions {
    pub fn validate(&self) -> Result<()> {
        if self.c == 0 {
            return Err(FuseError::arg("window length c must be at least 1"));
        }
        if !(self.eps_c >= 0.0) {
            return Err(FuseError::arg(format!("eps_c must be nonnegative, got {}", self.eps_c)));
        }
        if self.max_iter == 0 {
            return Err(FuseError::arg("max_iter must be at least 1"));
        }
        if !(self.energy > 0.0 && self.energy <= 1.0) {
            return Err(FuseError::arg(format!(
                "energy target must lie in (0, 1], got {}",
                self.energy
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CpodResult {
    pub u_fused: DVector<f64>,
    pub coefficients: DVector<f64>,
    pub multipliers: DVector<f64>,
    /// Cost after each iteration.
    pub cost_history: Vec<f64>,
    /// Cost dispersion once a full window exists, one entry per iteration from `c` on.
    pub dispersion_history: Vec<f64>,
    /// Retained rank used at each iteration.
    pub rank_history: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// `|H^T u_fused + delta - z|`.
    pub constraint_residual: f64,
    /// Worst `|Phi^T Phi - I|` seen across iterations.
    pub orthonormality_error: f64,
}

/// `mean(J^2) - mean(J)^2` over the last `c` values.
pub fn cost_dispersion(history: &[f64], c: usize) -> Option<f64> {
    if c == 0 || history.len() < c {
        return None;
    }
    let w = &history[history.len() - c..];
    let mean = w.iter().sum::<f64>() / c as f64;
    let mean_sq = w.iter().map(|j| j * j).sum::<f64>() / c as f64;
    Some(mean_sq - mean * mean)
}

fn truncated(u: &DMatrix<f64>, energy: f64, m: usize) -> Result<PodBasis> {
    let pod = pod_of_matrix(u)?;
    let k = truncate_rank(&pod.singular_values, energy)?;
    // the constraints need at least m directions
    let k = k.max(m).min(pod.all_modes().ncols());
    pod.with_rank(k)
}

/// Iterative constrained POD fusion.
///
/// The first guess blends the two sources with `theta_init`; every iteration
/// fits the constrained coefficients, evaluates the cost, appends the new
/// iterate to the bank and recomputes the truncated basis.
pub fn run_cpod(
    snapshots: &SnapshotSet,
    u_cfd: &DVector<f64>,
    u_wt: &DVector<f64>,
    z: &DVector<f64>,
    op: &OutputOperator,
    theta_init: f64,
    options: &CpodOptions,
) -> Result<CpodResult> {
    options.validate()?;
    if !(0.0..=1.0).contains(&theta_init) {
        return Err(FuseError::arg(format!(
            "theta_init must lie in [0, 1], got {theta_init}"
        )));
    }
    let n = snapshots.cells();
    check_len("operator", op.cells(), n)?;
    check_len("u_cfd", u_cfd.len(), n)?;
    check_len("u_wt", u_wt.len(), n)?;
    if u_cfd.iter().chain(u_wt.iter()).any(|v| !v.is_finite()) {
        return Err(FuseError::Data(
            "initial fields must be finite; impute gaps first".into(),
        ));
    }
    let m = op.qois();
    let target = z - op.offset();

    let mut guess = u_cfd * theta_init + u_wt * (1.0 - theta_init);
    let mut basis = truncated(snapshots.matrix(), options.energy, m)?;
    let mut enriched = snapshots.matrix().clone().insert_column(snapshots.len(), 0.0);
    let mut costs = Vec::new();
    let mut dispersions = Vec::new();
    let mut ranks = Vec::new();
    let mut ortho = basis.orthonormality_error();
    let mut converged = false;
    let (mut fused, mut sol);
    loop {
        let phi = basis.modes();
        sol = solve_kkt(phi, op, z, &guess)?;
        fused = phi * &sol.a;
        let constraint = op.integrate(&fused) - &target;
        let cost = 0.5 * (&fused - &guess).norm_squared() + sol.lambda.dot(&constraint);
        if !cost.is_finite() {
            return Err(FuseError::numerical("CPOD cost is not finite"));
        }
        costs.push(cost);
        ranks.push(basis.k);
        if let Some(d) = cost_dispersion(&costs, options.c) {
            dispersions.push(d);
            if d <= options.eps_c {
                converged = true;
                break;
            }
        }
        if costs.len() >= options.max_iter {
            break;
        }
        enriched.column_mut(snapshots.len()).copy_from(&fused);
        basis = truncated(&enriched, options.energy, m)?;
        ortho = ortho.max(basis.orthonormality_error());
        guess = fused.clone();
    }
    let constraint_residual = (op.integrate(&fused) - &target).norm();
    Ok(CpodResult {
        u_fused: fused,
        coefficients: sol.a,
        multipliers: sol.lambda,
        iterations: costs.len(),
        cost_history: costs,
        dispersion_history: dispersions,
        rank_history: ranks,
        converged,
        constraint_residual,
        orthonormality_error: ortho,
    })
}

/// Statistics over replicated CPOD runs with random initial blends.
#[derive(Clone, Debug)]
pub struct CpodEnsemble {
    pub mean: DVector<f64>,
    /// Unbiased sample variance per cell.
    pub cov_diag: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Replicates that succeeded.
    pub t: usize,
    /// Replicates requested.
    pub requested: usize,
    /// `t - 1`.
    pub nu: usize,
    pub beta: f64,
    pub t_quantile: f64,
    pub thetas: Vec<f64>,
    pub cost_histories: Vec<Vec<f64>>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    /// `(replicate index, message)` for every dropped replicate.
    pub failures: Vec<(usize, String)>,
}

impl CpodEnsemble {
    /// Half-width of the bounds per cell.
    pub fn half_width(&self) -> DVector<f64> {
        (&self.upper - &self.lower) * 0.5
    }
}

/// Initial blend for replicate `index`: uniform on [0, 1), seeded with `seed + index`.
pub fn replicate_theta(seed: u64, index: usize) -> f64 {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64)).random::<f64>()
}

/// Runs [`run_cpod`] `t` times with random initial blends and builds
/// Student-t bounds `mean -/+ t_{1-beta/2, t-1} sqrt(var) / sqrt(t)`.
///
/// Failed replicates are dropped and recorded.
#[allow(clippy::too_many_arguments)]
pub fn cpod_ensemble(
    snapshots: &SnapshotSet,
    u_cfd: &DVector<f64>,
    u_wt: &DVector<f64>,
    z: &DVector<f64>,
    op: &OutputOperator,
    options: &CpodOptions,
    t: usize,
    beta: f64,
    seed: u64,
) -> Result<CpodEnsemble> {
    if t < 2 {
        return Err(FuseError::arg(format!("ensemble size must be at least 2, got {t}")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(FuseError::arg(format!("beta must lie in (0, 1), got {beta}")));
    }
    options.validate()?;
    let runs: Vec<(f64, Result<CpodResult>)> = (0..t)
        .into_par_iter()
        .map(|i| {
            let theta = replicate_theta(seed, i);
            (theta, run_cpod(snapshots, u_cfd, u_wt, z, op, theta, options))
        })
        .collect();

    let n = snapshots.cells();
    let mut failures = Vec::new();
    let mut infeasible = None;
    let mut ok = Vec::new();
    for (i, (theta, r)) in runs.into_iter().enumerate() {
        match r {
            Ok(r) => ok.push((theta, r)),
            Err(e) => {
                if let FuseError::Infeasible { qoi } = &e {
                    infeasible.get_or_insert_with(|| qoi.clone());
                }
                failures.push((i, e.to_string()));
            }
        }
    }
    if ok.len() < 2 {
        if let Some(qoi) = infeasible {
            return Err(FuseError::Infeasible { qoi });
        }
        let first = failures.first().map_or("", |f| f.1.as_str());
        return Err(FuseError::numerical(format!(
            "{} of {t} CPOD replicates failed; first failure: {first}",
            failures.len()
        )));
    }
    let count = ok.len();
    let mut mean = DVector::zeros(n);
    for (_, r) in &ok {
        mean += &r.u_fused;
    }
    mean /= count as f64;
    let mut var = DVector::zeros(n);
    for (_, r) in &ok {
        let d = &r.u_fused - &mean;
        var += d.component_mul(&d);
    }
    var /= (count - 1) as f64;
    let nu = count - 1;
    let q = t_quantile(1.0 - beta, nu as f64)?;
    let half = var.map(|v| q * v.sqrt() / (count as f64).sqrt());
    Ok(CpodEnsemble {
        lower: &mean - &half,
        upper: &mean + &half,
        mean,
        cov_diag: var,
        t: count,
        requested: t,
        nu,
        beta,
        t_quantile: q,
        thetas: ok.iter().map(|(th, _)| *th).collect(),
        cost_histories: ok.iter().map(|(_, r)| r.cost_history.clone()).collect(),
        iterations: ok.iter().map(|(_, r)| r.iterations).collect(),
        converged: ok.iter().map(|(_, r)| r.converged).collect(),
        failures,
    })
}
