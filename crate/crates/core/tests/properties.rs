use fieldfuse::bayes::{map_estimate, posterior_covariance, QoiMeasurement};
use fieldfuse::cpod::{pod_of_matrix, run_cpod, solve_kkt_matrix, CpodOptions, SnapshotSet};
use fieldfuse::geometry::{
    build_airfoil_grid, build_output_operator, impute_missing, interpolate_to_common_grid, naca4, OutputOperator, Qoi,
    SurfaceGrid,
};
use fieldfuse::io::{read_field_csv, write_field_csv};
use fieldfuse::prior::{
    estimate_theta, fuse_prior_mean, prior_covariance, Covariance, Fidelity, FlightCondition, PriorSpec,
};
use fieldfuse::synth::{generate_scenario, table1_conditions, GridKind, GridSpec, ScenarioSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn airfoil(cells: usize, thickness: f64) -> SurfaceGrid {
    let (u, l) = naca4(0.02, 0.4, thickness, 4 * cells + 1);
    build_airfoil_grid(&u, &l, cells).unwrap()
}

fn random_field(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0))
}

struct Linear {
    op: OutputOperator,
    prior: PriorSpec,
    sigma: DMatrix<f64>,
}

fn linear_instance(seed: u64) -> Linear {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=20);
    let h = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
    let offset = DVector::from_fn(2, |_, _| rng.random_range(-0.2..0.2));
    let op = OutputOperator::from_matrix(h, vec!["a".into(), "b".into()], 0.0)
        .unwrap()
        .with_offset(offset)
        .unwrap();
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let sigma = &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.3;
    let prior = PriorSpec {
        mean: random_field(n, &mut rng),
        covariance: Covariance::Dense(sigma.clone()),
        theta: 0.5,
        length_scale: 1.0,
        nugget: 0.0,
    };
    Linear { op, prior, sigma }
}

fn map(inst: &Linear, z: &DVector<f64>, tau2: f64) -> DVector<f64> {
    map_estimate(&QoiMeasurement::new(z.clone(), tau2).unwrap(), &inst.op, &inst.prior).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constant_pressure_carries_no_load(cells in 16usize..200, t in 0.04f64..0.2, c in -50.0f64..50.0, seed: u64) {
        let g = airfoil(cells, t);
        let op = build_output_operator(&g, 0.03, &[Qoi::Lift, Qoi::Moment]).unwrap();
        let y = random_field(g.len(), &mut ChaCha8Rng::seed_from_u64(seed));
        let shifted = y.add_scalar(c);
        let d = op.apply(&shifted).unwrap() - op.apply(&y).unwrap();
        prop_assert!(d.amax() <= 1e-6 * c.abs().max(1e-300), "{d}");
    }

    #[test]
    fn operator_is_linear(cells in 16usize..200, a in -3.0f64..3.0, b in -3.0f64..3.0, seed: u64) {
        let g = airfoil(cells, 0.12);
        let op = build_output_operator(&g, -0.02, &[Qoi::Lift, Qoi::Moment]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = (random_field(g.len(), &mut rng), random_field(g.len(), &mut rng));
        let lhs = op.apply(&(&x * a + &y * b)).unwrap();
        let rhs = op.apply(&x).unwrap() * a + op.apply(&y).unwrap() * b;
        prop_assert!((lhs - rhs).amax() <= 1e-12 * (1.0 + a.abs() + b.abs()));
    }

    #[test]
    fn generated_operators_have_full_rank(cells in 8usize..160, wing: bool, alpha in -0.1f64..0.1) {
        let spec = GridSpec { kind: if wing { GridKind::Wing } else { GridKind::Airfoil }, cells, span_stations: 3, ..GridSpec::default() };
        let g = spec.build().unwrap();
        let op = build_output_operator(&g, alpha, &[Qoi::Lift, Qoi::Moment]).unwrap();
        let s = op.matrix().clone().singular_values();
        prop_assert!(s.min() > 1e-10 * s.max());
    }

    #[test]
    fn interpolation_to_same_grid_is_idempotent(cells in 8usize..120, seed: u64) {
        let g = airfoil(cells, 0.12);
        let v: Vec<f64> = random_field(g.len(), &mut ChaCha8Rng::seed_from_u64(seed)).iter().copied().collect();
        let once = interpolate_to_common_grid(&v, &g, &g).unwrap();
        let twice = interpolate_to_common_grid(&once, &g, &g).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(&once, &v);
    }

    #[test]
    fn imputation_keeps_present_cells(cells in 16usize..120, start in 0usize..1000, len in 1usize..10, seed: u64) {
        let g = airfoil(cells, 0.12);
        let v = random_field(g.len(), &mut ChaCha8Rng::seed_from_u64(seed));
        let mut gappy: Vec<Option<f64>> = v.iter().map(|&x| Some(x)).collect();
        for k in 0..len {
            gappy[(start + k) % g.len()] = None;
        }
        let filled = impute_missing(&gappy, &g).unwrap();
        for (f, o) in filled.iter().zip(&gappy) {
            prop_assert!(f.is_finite());
            if let Some(x) = o {
                prop_assert_eq!(f, x);
            }
        }
        let again = impute_missing(&filled.iter().map(|&x| Some(x)).collect::<Vec<_>>(), &g).unwrap();
        prop_assert_eq!(again, filled);
    }

    #[test]
    fn theta_minimizes_qoi_mismatch(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = airfoil(64, 0.12);
        let op = build_output_operator(&g, 0.04, &[Qoi::Lift, Qoi::Moment]).unwrap();
        let (m1, m2) = (random_field(g.len(), &mut rng), random_field(g.len(), &mut rng));
        let z = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let cost = |t: f64| (op.apply(&fuse_prior_mean(&m1, &m2, t).unwrap()).unwrap() - &z).norm_squared();
        let best = cost(estimate_theta(&m1, &m2, &op, &z).unwrap());
        for _ in 0..100 {
            let t: f64 = rng.random();
            prop_assert!(best <= cost(t) * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn kernel_covariance_factorizes(cells in 8usize..120, ell in 1e-4f64..0.5, var in 1e-4f64..1.0) {
        let g = airfoil(cells, 0.12);
        let c = prior_covariance(&g, var, ell, 1e-10).unwrap();
        prop_assert!(c.cholesky().is_ok());
    }

    #[test]
    fn kernel_depends_only_on_distance(cells in 8usize..60, ell in 0.01f64..0.5, seed: u64) {
        let g = airfoil(cells, 0.12);
        let c = Covariance::SquaredExponential { centers: g.centers().to_vec(), variance: 0.2, length_scale: ell, nugget: 0.0 };
        let mut perm: Vec<usize> = (0..g.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted = Covariance::SquaredExponential {
            centers: perm.iter().map(|&i| g.centers()[i]).collect(),
            variance: 0.2,
            length_scale: ell,
            nugget: 0.0,
        };
        for _ in 0..20 {
            let (i, j) = (rng.random_range(0..g.len()), rng.random_range(0..g.len()));
            prop_assert_eq!(permuted.entry(i, j), c.entry(perm[i], perm[j]));
        }
    }

    #[test]
    fn map_is_stationary(seed: u64, tau2 in 1e-6f64..1.0) {
        let inst = linear_instance(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let z = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let y = map(&inst, &z, tau2);
        let sigma_inv = inst.sigma.clone().try_inverse().unwrap();
        let r = &z - inst.op.offset() - inst.op.matrix().tr_mul(&y);
        let grad = -(inst.op.matrix() * r) / tau2 + &sigma_inv * (&y - &inst.prior.mean);
        let scale = z.norm() / tau2 + (&sigma_inv * &inst.prior.mean).norm();
        prop_assert!(grad.norm() <= 1e-8 * scale, "{} vs {}", grad.norm(), scale);
    }

    #[test]
    fn map_shifts_with_offset(seed: u64, shift in -1.0f64..1.0) {
        // Moving z and delta together leaves the estimate unchanged.
        let inst = linear_instance(seed);
        let z = DVector::from_vec(vec![0.3, -0.2]);
        let y = map(&inst, &z, 1e-3);
        let moved = Linear {
            op: inst.op.clone().with_offset(inst.op.offset().add_scalar(shift)).unwrap(),
            prior: inst.prior.clone(),
            sigma: inst.sigma.clone(),
        };
        let y2 = map(&moved, &z.add_scalar(shift), 1e-3);
        prop_assert!((y - y2).amax() <= 1e-9);
    }

    #[test]
    fn map_is_affine_in_z(seed: u64, w in 0.0f64..1.0) {
        let inst = linear_instance(seed);
        let (z1, z2) = (DVector::from_vec(vec![0.5, -1.0]), DVector::from_vec(vec![-0.3, 0.2]));
        let mix = map(&inst, &(&z1 * w + &z2 * (1.0 - w)), 1e-2);
        let sep = map(&inst, &z1, 1e-2) * w + map(&inst, &z2, 1e-2) * (1.0 - w);
        prop_assert!((mix - sep).amax() <= 1e-9);
    }

    #[test]
    fn posterior_variance_never_exceeds_prior(seed: u64, tau2 in 1e-8f64..10.0) {
        let inst = linear_instance(seed);
        let d = posterior_covariance(&inst.op, tau2, &inst.prior, true).unwrap().diagonal();
        for i in 0..d.len() {
            prop_assert!(d[i] <= inst.sigma[(i, i)] + 1e-12);
        }
    }

    #[test]
    fn misfit_grows_with_tau2(seed: u64, a in -8.0f64..1.0, b in -8.0f64..1.0) {
        let inst = linear_instance(seed);
        let z = DVector::from_vec(vec![0.7, -0.4]);
        let (lo, hi) = (10f64.powf(a.min(b)), 10f64.powf(a.max(b)));
        let misfit = |t: f64| (inst.op.apply(&map(&inst, &z, t)).unwrap() - &z).norm();
        prop_assert!(misfit(lo) <= misfit(hi) + 1e-10);
    }

    #[test]
    fn kkt_solution_is_optimal_and_exact(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(5..40);
        let k = rng.random_range(2..=n.min(12));
        let m = rng.random_range(1..=2.min(k));
        let phi = DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let h = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let r = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let u = random_field(n, &mut rng);
        let names: Vec<String> = (0..m).map(|j| format!("q{j}")).collect();
        let s = solve_kkt_matrix(phi.columns(0, k), &h, &names, &r, &u).unwrap();
        let stationarity = phi.transpose() * (&phi * &s.a - &u) + phi.transpose() * &h * &s.lambda;
        let feasibility = h.tr_mul(&phi) * &s.a - &r;
        prop_assert!(stationarity.norm() <= 1e-9 && feasibility.norm() <= 1e-9);

        let b = h.tr_mul(&phi);
        let mut kkt = DMatrix::zeros(k + m, k + m);
        kkt.view_mut((0, 0), (k, k)).fill_with_identity();
        kkt.view_mut((0, k), (k, m)).copy_from(&b.transpose());
        kkt.view_mut((k, 0), (m, k)).copy_from(&b);
        prop_assert!(kkt.singular_values().min() > 1e-12);
    }

    #[test]
    fn proportional_constraints_are_infeasible(seed: u64, scale in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 12;
        let phi = DMatrix::from_fn(n, 5, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let col = random_field(n, &mut rng);
        let h = DMatrix::from_columns(&[col.clone(), col * scale]);
        let names = vec!["C_L".to_string(), "C_M".to_string()];
        let e = solve_kkt_matrix(phi.columns(0, 5), &h, &names, &DVector::from_vec(vec![1.0, 2.0]), &DVector::zeros(n));
        prop_assert!(matches!(e, Err(fieldfuse::FuseError::Infeasible { ref qoi }) if qoi == "C_M"), "{e:?}");
    }

    #[test]
    fn pod_energy_identity(seed: u64, rows in 4usize..30, cols in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        let pod = pod_of_matrix(&u).unwrap();
        let total = u.norm_squared();
        for k in 0..=pod.singular_values.len() {
            let phi = pod.all_modes().columns(0, k);
            let resid = (&u - phi * (phi.transpose() * &u)).norm_squared();
            let tail: f64 = pod.singular_values.iter().skip(k).map(|d| d * d).sum();
            prop_assert!((resid - tail).abs() <= 1e-9 * total);
        }
        prop_assert!(pod.orthonormality_error() <= 1e-9);
    }

    #[test]
    fn field_files_round_trip(values in prop::collection::vec(prop::option::of(-1e6f64..1e6), 1..50)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        write_field_csv(&p, &values).unwrap();
        prop_assert_eq!(read_field_csv(&p).unwrap(), values);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn cpod_keeps_constraints_and_orthonormal_basis(seed: u64, theta in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = airfoil(48, 0.12);
        let op = build_output_operator(&g, 0.03, &[Qoi::Lift, Qoi::Moment]).unwrap();
        let q = rng.random_range(4..12);
        let base = random_field(g.len(), &mut rng);
        let u = DMatrix::from_fn(g.len(), q, |i, _| base[i] + rng.random_range(-0.3..0.3));
        let bank = SnapshotSet::new(u, vec![FlightCondition::new(0.7, 6.0, 2.0); q], vec![Fidelity::Simulation; q]).unwrap();
        let (cfd, wt) = (bank.matrix().column(0).into_owned(), bank.matrix().column(1).into_owned());
        let z = op.apply(&base).unwrap();
        let r = run_cpod(&bank, &cfd, &wt, &z, &op, theta, &CpodOptions::default()).unwrap();
        prop_assert!(r.orthonormality_error <= 1e-9);
        if r.converged {
            prop_assert!(r.constraint_residual <= 1e-10 * (1.0 + z.norm()));
        }
        prop_assert!((op.apply(&r.u_fused).unwrap() - &z).norm() <= 1e-10 * (1.0 + z.norm()));
    }

    #[test]
    fn scenarios_are_reproducible_and_consistent(seed: u64, case in 0usize..11) {
        let spec = ScenarioSpec { seed, condition: table1_conditions()[case], ..ScenarioSpec::default() };
        let a = generate_scenario(&spec).unwrap();
        let b = generate_scenario(&spec).unwrap();
        prop_assert_eq!(&a.mu_cfd, &b.mu_cfd);
        prop_assert_eq!(&a.mu_wt, &b.mu_wt);
        prop_assert_eq!(&a.z_measured, &b.z_measured);
        let direct = a.operator.apply(&a.y_true).unwrap();
        prop_assert!((direct - &a.z_noiseless).amax() <= 1e-12);
    }
}
