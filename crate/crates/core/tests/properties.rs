use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use podvar::assimilate::{
    solve_poden3dvar, solve_podpce3dvar, AssimilationProblem, OptimizerConfig, PodEnMethod,
    PodEnOptions, PodPceCost,
};
use podvar::exec::Execution;
use podvar::experiments::metrics::variable_groups;
use podvar::experiments::{inject_noise, rmse_by, rmse_global, Standardizer};
use podvar::linalg::min_eigenvalue;
use podvar::pce::{design_matrix, fit_lars, multi_index_set, select_degree, InputTransform, PceConfig};
use podvar::pod::{fit_pod, SnapshotMatrix, Truncation};
use podvar::surrogate::{build_poden, build_podpce, metamodel_error_covariance};
use podvar::toymodel::{TidalParams, ToyModel, Variable};

fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

fn uniform(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..=1.0))
}

/// Three inputs in [-1, 1] mapped nonlinearly to `m_y` outputs.
fn ensemble(n: usize, m_y: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let x = uniform(3, n, seed);
    let w = gaussian(m_y, 5, seed + 1);
    let y = DMatrix::from_fn(m_y, n, |i, j| {
        let (a, b, c) = (x[(0, j)], x[(1, j)], x[(2, j)]);
        let f = [a, b * b, c, a * c, (2.0 * b).cos()];
        (0..5).map(|k| w[(i, k)] * f[k]).sum::<f64>()
    });
    (x, y)
}

fn unit_box(dim: usize) -> Vec<InputTransform> {
    vec![InputTransform::uniform(-1.0, 1.0).unwrap(); dim]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pod_modes_and_coefficients_are_orthonormal(m in 2usize..40, n in 2usize..30, seed in any::<u64>()) {
        let u = gaussian(m, n, seed);
        let basis = fit_pod(&SnapshotMatrix::new(u.clone()).unwrap()).unwrap();
        let e = basis.full_rank();
        prop_assert_eq!(e, m.min(n));
        let phi = basis.modes();
        prop_assert!((phi.tr_mul(phi) - DMatrix::identity(e, e)).amax() < 1e-10);
        let nz = basis.numerical_rank();
        let nn = basis.coefficients().columns(0, nz).into_owned();
        prop_assert!((nn.tr_mul(&nn) - DMatrix::identity(nz, nz)).amax() < 1e-10);
        let sv = basis.singular_values();
        prop_assert!(sv.iter().zip(sv.iter().skip(1)).all(|(a, b)| a >= b));
    }

    #[test]
    fn evr_is_monotone_and_threshold_rank_is_minimal(m in 3usize..30, n in 3usize..20, tau in 0.05f64..1.0, seed in any::<u64>()) {
        let basis = fit_pod(&SnapshotMatrix::new(gaussian(m, n, seed)).unwrap()).unwrap();
        let e = basis.full_rank();
        let evr: Vec<f64> = (1..=e).map(|d| basis.evr(d).unwrap()).collect();
        prop_assert!(evr.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!((evr[e - 1] - 1.0).abs() <= 1e-12);
        let d = basis.rank_for(Truncation::EvrThreshold(tau)).unwrap();
        prop_assert!(evr[d - 1] >= tau - 1e-12);
        if d > 1 {
            prop_assert!(evr[d - 2] < tau);
        }
    }

    #[test]
    fn reduced_coordinates_round_trip(m in 5usize..30, n in 4usize..15, seed in any::<u64>()) {
        let u = gaussian(m, n, seed);
        let basis = fit_pod(&SnapshotMatrix::new(u.clone()).unwrap()).unwrap();
        let d = basis.numerical_rank().min(3);
        let t = basis.truncate(Truncation::Modes(d)).unwrap();
        let nu = DVector::from_iterator(d, gaussian(d, 1, seed ^ 1).iter().copied());
        let back = t.project(&t.reconstruct(&nu).unwrap()).unwrap();
        prop_assert!((back - &nu).amax() < 1e-9 * nu.amax().max(1.0));
        // members are reproduced from their coefficients at full rank
        for j in 0..n {
            let nu = basis.coefficients().row(j).transpose();
            let y = basis.reconstruct(&nu).unwrap();
            prop_assert!((y - u.column(j)).amax() < 1e-9 * u.amax());
        }
    }

    #[test]
    fn polynomials_in_the_basis_are_reproduced(p in 0usize..4, dim in 1usize..4, seed in any::<u64>()) {
        let idx = multi_index_set(dim, p);
        let n = 2 * idx.len() + 8;
        let x = uniform(n, dim, seed);
        let psi = design_matrix(&x, &idx, &unit_box(dim)).unwrap();
        let coef = DVector::from_iterator(idx.len(), uniform(idx.len(), 1, seed ^ 7).iter().copied());
        let fit = fit_lars(&psi, &(&psi * &coef), false).unwrap();
        prop_assert!((fit.coefficients - coef).amax() < 1e-8);
    }

    #[test]
    fn degree_selection_is_deterministic(seed in any::<u64>()) {
        let x = uniform(60, 2, seed);
        let y = DMatrix::from_fn(60, 2, |i, k| x[(i, 0)].powi(2 + k as i32) - x[(i, 1)]);
        let (tx, ty) = (x.rows(0, 45).into_owned(), y.rows(0, 45).into_owned());
        let (vx, vy) = (x.rows(45, 15).into_owned(), y.rows(45, 15).into_owned());
        let cfg = PceConfig { max_degree: 4, ..PceConfig::default() };
        let (a, sa) = select_degree(&tx, &ty, &vx, &vy, &unit_box(2), &cfg, Execution::Parallel).unwrap();
        let (b, sb) = select_degree(&tx, &ty, &vx, &vy, &unit_box(2), &cfg, Execution::Sequential).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(sa, sb);
    }

    #[test]
    fn metamodel_covariance_trace_and_psd(d in 1usize..4, seed in any::<u64>()) {
        let (x, y) = ensemble(60, 12, seed);
        let cfg = PceConfig { max_degree: 3, ..PceConfig::default() };
        let s = build_podpce(&x, &y, Truncation::Modes(d), &unit_box(3), &cfg, seed, Execution::Sequential).unwrap();
        let r = DMatrix::from_diagonal(&DVector::from_iterator(12, uniform(12, 1, seed ^ 3).iter().map(|v| 0.1 + v.abs())));
        let rt = metamodel_error_covariance(&s, &r).unwrap();
        let lambda = s.basis().eigenvalues();
        let delta = s.pce().empirical_errors();
        let expected = lambda.iter().skip(d).sum::<f64>() / 59.0
            + (0..d).map(|k| lambda[k] * delta[k]).sum::<f64>();
        let got = rt.matrix.trace() - r.trace();
        prop_assert!((got - expected).abs() <= 1e-8 * expected.abs().max(1e-12));
        let diff = &rt.matrix - &r;
        prop_assert!(min_eigenvalue(&diff) >= -1e-10 * diff.trace() / 12.0);
    }

    #[test]
    fn surrogate_prediction_stays_in_retained_subspace(d in 1usize..4, seed in any::<u64>()) {
        let (x, y) = ensemble(50, 10, seed);
        let cfg = PceConfig { max_degree: 3, ..PceConfig::default() };
        let s = build_podpce(&x, &y, Truncation::Modes(d), &unit_box(3), &cfg, seed, Execution::Sequential).unwrap();
        let p = uniform(3, 1, seed ^ 5);
        let anomaly = s.predict(p.as_slice()).unwrap() - s.basis().mean();
        let phi = s.basis().retained_modes().into_owned();
        let residual = &anomaly - &phi * phi.tr_mul(&anomaly);
        prop_assert!(residual.amax() <= 1e-10 * anomaly.amax().max(1.0));
    }

    #[test]
    fn cost_gradient_matches_central_differences(seed in any::<u64>()) {
        let (x, y) = ensemble(80, 10, seed);
        let cfg = PceConfig { max_degree: 3, ..PceConfig::default() };
        let s = build_podpce(&x, &y, Truncation::Modes(3), &unit_box(3), &cfg, seed, Execution::Sequential).unwrap();
        let prob = AssimilationProblem::new(
            DVector::zeros(3),
            DMatrix::identity(3, 3),
            DVector::from_iterator(10, gaussian(10, 1, seed ^ 9).iter().copied()),
            DMatrix::identity(10, 10) * 0.3,
            vec![(-1.0, 1.0); 3],
        ).unwrap();
        let cost = PodPceCost::new(&s, &prob).unwrap();
        let p = uniform(3, 1, seed ^ 11) * 0.9;
        let p = DVector::from_column_slice(p.as_slice());
        let (_, g) = cost.value_and_gradient(&p).unwrap();
        let h = 2e-6;
        for i in 0..3 {
            let (mut a, mut b) = (p.clone(), p.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (cost.value(&a).unwrap() - cost.value(&b).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-6 * g.amax().max(1e-8), "component {}: {} vs {}", i, fd, g[i]);
        }
    }

    #[test]
    fn joint_pod_closed_form_matches_descent(d in 1usize..6, seed in any::<u64>()) {
        let x = uniform(3, 20, seed);
        let y = gaussian(12, 3, seed ^ 1) * &x + gaussian(12, 20, seed ^ 2) * 0.2;
        let s = build_poden(&x, &y, Truncation::Modes(d)).unwrap();
        let prob = AssimilationProblem::new(
            DVector::from_element(3, 0.1),
            DMatrix::identity(3, 3) * 0.5,
            DVector::from_iterator(12, gaussian(12, 1, seed ^ 3).iter().copied()),
            DMatrix::identity(12, 12) * 0.4,
            vec![(-50.0, 50.0); 3],
        ).unwrap();
        let closed = solve_poden3dvar(&s, &prob, &PodEnOptions { clamp_to_bounds: false, ..PodEnOptions::default() }).unwrap();
        let iterative = solve_poden3dvar(&s, &prob, &PodEnOptions {
            method: PodEnMethod::Iterative,
            clamp_to_bounds: false,
            optimizer: OptimizerConfig { tol: 1e-12, ftol: 0.0, max_iter: 1000, memory: 10 },
        }).unwrap();
        prop_assert!((&closed.x_a - &iterative.x_a).amax() <= 1e-8);
    }

    #[test]
    fn uniform_covariance_scaling_keeps_the_argmin(c in 0.05f64..20.0, seed in any::<u64>()) {
        let (x, y) = ensemble(60, 10, seed);
        let cfg = PceConfig { max_degree: 3, ..PceConfig::default() };
        let s = build_podpce(&x, &y, Truncation::Modes(3), &unit_box(3), &cfg, seed, Execution::Sequential).unwrap();
        let y_o = s.predict(&[0.3, -0.2, 0.5]).unwrap();
        let make = |a: f64| AssimilationProblem::with_scaling(
            DVector::zeros(3), DMatrix::identity(3, 3), y_o.clone(), DMatrix::identity(10, 10) * 0.05,
            vec![(-1.0, 1.0); 3], a, a,
        ).unwrap();
        let opt = OptimizerConfig::default();
        let base = solve_podpce3dvar(&s, &make(1.0), &opt).unwrap();
        let scaled = solve_podpce3dvar(&s, &make(c), &opt).unwrap();
        prop_assert!((&base.x_a - &scaled.x_a).amax() <= 1e-6);
        for out in [&base, &scaled] {
            prop_assert!(out.cost_trace.windows(2).all(|w| w[1].cost <= w[0].cost));
            prop_assert!(out.x_a.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn toy_model_is_pure_and_damped(k2 in 21.02f64..90.66, mtl in 4.0f64..6.0, ctl in 0.8f64..1.3, ctv in 0.8f64..3.0) {
        let model = ToyModel::default();
        let p = TidalParams { k2, mtl, ctl, ctv };
        let y = model.simulate(&p).unwrap();
        prop_assert_eq!(y.len(), 570);
        prop_assert_eq!(&y, &model.simulate(&p).unwrap());
        let undamped = model.simulate_unchecked(&TidalParams { k2: 1e12, ..p });
        for s in 0..model.n_stations() {
            for t in 0..model.n_times() {
                for var in [Variable::U, Variable::V] {
                    let i = model.flat_index(var, s, t);
                    prop_assert!(y[i].abs() <= undamped[i].abs() + 1e-12);
                }
                let eta = y[model.flat_index(Variable::Eta, s, t)];
                prop_assert!((eta - mtl).abs() <= 3.8 * ctl + 1e-12);
            }
        }
    }

    #[test]
    fn grouped_rmse_recombines_to_global(seed in any::<u64>(), shift in -2.0f64..2.0) {
        let model = ToyModel::default();
        let groups = variable_groups(&model);
        let y_ref = DVector::from_iterator(570, gaussian(570, 1, seed).iter().copied());
        let y_hat = &y_ref + DVector::from_iterator(570, gaussian(570, 1, seed ^ 1).iter().map(|v| v + shift));
        let st = Standardizer::new(DVector::zeros(570), DVector::from_element(570, 2.0)).unwrap();
        let global = rmse_global(&y_ref, &y_hat, &st).unwrap();
        let parts = rmse_by(&y_ref, &y_hat, &st, &groups).unwrap();
        let mean_sq = parts.iter().map(|v| v * v).sum::<f64>() / parts.len() as f64;
        prop_assert!((global * global - mean_sq).abs() <= 1e-12 * mean_sq.max(1.0));
    }

    #[test]
    fn noise_draws_depend_only_on_the_seed(level in 0.01f64..0.5, seed in any::<u64>()) {
        let model = ToyModel::default();
        let y_t = model.simulate_slice(&[50.0, 5.0, 1.0, 2.0]).unwrap();
        let series: Vec<_> = Variable::ALL
            .iter()
            .flat_map(|&v| (0..model.n_stations()).map(move |s| (v, s)))
            .map(|(v, s)| model.series(v, s))
            .collect();
        let a = inject_noise(&y_t, &series, level, seed).unwrap();
        let b = inject_noise(&y_t, &series, level, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let doubled = inject_noise(&y_t, &series, 2.0 * level, seed).unwrap();
        let ea = (&a.y_o - &y_t).norm();
        let ed = (&doubled.y_o - &y_t).norm();
        prop_assert!((ed - 2.0 * ea).abs() <= 1e-9 * ea.max(1e-12));
    }
}
