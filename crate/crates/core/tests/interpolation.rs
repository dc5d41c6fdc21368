use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use kerncon::interp::fit_with_centers;
use kerncon::kernel::{gram_matrix, linear_part, BoxDomain, CenterSet};
use kerncon::plant::{drift_data_from_states, PlantModel};
use kerncon::{fit, load_fixture, DriftDataset, ErrorBound, KernelSpec};

fn fixture_model() -> (kerncon::Fixture, kerncon::InterpModel) {
    let f = load_fixture("paper-sec4").unwrap();
    let m = fit(&f.drift, &f.constants.kernel, f.constants.lambda).unwrap();
    (f, m)
}

/// `K(x,x) − kᵀ K̂⁻¹ k` with `K̂ = (λI+K)(2λI+K)⁻¹(λI+K)` inverted densely.
fn dense_power_sq(model: &kerncon::InterpModel, x: &DVector<f64>) -> f64 {
    let core = model.power_core().unwrap();
    let k = model.kernel_vector(x).unwrap();
    let kxx = kerncon::kernel::eval_kernel(model.kernel(), x, x).unwrap();
    kxx - k.dot(&(core.try_inverse().unwrap() * &k))
}

#[test]
fn power_function_matches_dense_oracle_when_well_conditioned() {
    let (f, _) = fixture_model();
    let model = fit(&f.drift, &KernelSpec::cubic(), 1e-2).unwrap();
    for x in [[0.3, -0.2], [1.0, 1.0], [-2.0, 0.5], [0.0, 0.0]] {
        let x = DVector::from_row_slice(&x);
        let stable = model.power_function(&x).unwrap().powi(2);
        let dense = dense_power_sq(&model, &x);
        assert!((stable - dense).abs() <= 1e-8 * (1.0 + dense.abs()), "{stable} vs {dense}");
    }
}

#[test]
fn fixture_gram_is_rank_nine() {
    let (_, m) = fixture_model();
    let ev = kerncon::linalg::sym_eigenvalues(m.gram().matrix());
    // ten centers in a nine-dimensional feature space
    assert!(ev[0].abs() < 1e-12, "{}", ev[0]);
    assert!(ev[1] > 1e-4);
    assert!((ev[9] - 296.19).abs() < 0.01);
}

#[test]
fn fixture_fit_interpolates_drift_data() {
    let (f, m) = fixture_model();
    assert!(m.fit_residual(&f.drift) <= 1e-8);
    for (j, c) in f.drift.x0.column_iter().enumerate() {
        let p = m.predict(&c.into_owned()).unwrap();
        assert!((p - f.drift.x1.column(j)).amax() < 1e-4);
    }
}

#[test]
fn coefficients_minimize_the_regularized_cost() {
    let (f, m) = fixture_model();
    for row in 0..2 {
        let base = m.regularized_cost(&f.drift, row).unwrap();
        for k in 0..10 {
            for h in [1e-3, -1e-3] {
                let mut c = m.coeffs().clone();
                c[(row, k)] += h;
                let perturbed = m.clone().with_coeffs(c).unwrap();
                assert!(perturbed.regularized_cost(&f.drift, row).unwrap() >= base - 1e-12);
            }
        }
    }
}

#[test]
fn regularization_raises_the_power_at_centers() {
    let (f, _) = fixture_model();
    let x = f.drift.x0.column(3).into_owned();
    let mut last = 0.0;
    for lambda in [1e-9, 1e-6, 1e-3, 1e-1] {
        let p = fit(&f.drift, &KernelSpec::cubic(), lambda).unwrap().power_function(&x).unwrap();
        assert!(p >= last - 1e-12);
        last = p;
    }
}

#[test]
fn true_drift_error_is_within_delta_on_regenerated_forced_data() {
    let (f, m) = fixture_model();
    let bound = ErrorBound::new(f.constants.gamma.clone(), std::sync::Arc::new(m.clone())).unwrap();
    for c in f.forced.xbar0.column_iter() {
        let x = c.into_owned();
        let d = f.plant.drift(&x).unwrap() - m.predict(&x).unwrap();
        assert!(d.norm() <= bound.delta(&x).unwrap() + 1e-12);
    }
}

#[test]
fn printed_forced_successors_agree_with_the_plant_up_to_rounding() {
    // X̄₁ was printed from unrounded X̄₀ and U₀; 4-decimal input rounding
    // moves f(x) + Bu by at most |∂f/∂x|·5e-5 + 5e-5 per entry.
    let (f, _) = fixture_model();
    for k in 0..f.forced.xbar0.ncols() {
        let x = f.forced.xbar0.column(k).into_owned();
        let u = f.forced.u0.column(k).into_owned();
        let regen = f.plant.step(&x, &u).unwrap();
        let slope = 1.0 + 3.0 * x[0] * x[0] + 0.5 + 0.4 * x[1].abs();
        let tol = 5e-5 * (slope + 1.0) + 5e-5;
        assert!((regen - f.forced.xbar1.column(k)).amax() <= tol, "column {k}");
    }
}

#[test]
fn gaussian_kernel_exact_interpolation() {
    let f = load_fixture("paper-sec4").unwrap();
    let plant = PlantModel::example();
    let data = drift_data_from_states(&plant, f.drift.x0.clone()).unwrap();
    let m = fit(&data, &KernelSpec::gaussian(1.0).unwrap(), 0.0).unwrap();
    assert!(m.fit_residual(&data) < 1e-8);
}

#[test]
fn explicit_centers_carry_their_domain_and_must_match_samples() {
    let f = load_fixture("paper-sec4").unwrap();
    let domain = BoxDomain::cube(2, -3.0, 3.0).unwrap();
    let centers = CenterSet::new(f.drift.x0.clone(), domain.clone()).unwrap();
    let m = fit_with_centers(&f.drift, &KernelSpec::cubic(), 1e-7, centers).unwrap();
    assert_eq!(m.centers().domain(), &domain);
    let partial = CenterSet::new(f.drift.x0.columns(0, 6).into_owned(), domain).unwrap();
    assert!(fit_with_centers(&f.drift, &KernelSpec::cubic(), 1e-7, partial).is_err());
}

fn points(n: usize, t: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-2.0f64..2.0, n * t).prop_map(move |v| DMatrix::from_vec(n, t, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_is_symmetric_psd(x in points(2, 7), ls in 0.3f64..3.0) {
        for k in [KernelSpec::cubic(), KernelSpec::gaussian(ls).unwrap()] {
            let g = gram_matrix(&k, &CenterSet::unbounded(x.clone()).unwrap());
            let m = g.matrix();
            prop_assert_eq!(m, &m.transpose());
            prop_assert!(kerncon::linalg::min_eigenvalue(m) >= -1e-9 * (1.0 + m.amax()));
        }
    }

    #[test]
    fn linear_split_reconstructs_the_model(x in points(2, 6), a in proptest::collection::vec(-1.0f64..1.0, 12), q in proptest::collection::vec(-2.0f64..2.0, 2)) {
        let centers = CenterSet::unbounded(x).unwrap();
        let a = DMatrix::from_vec(2, 6, a);
        let k = KernelSpec::cubic();
        let (abar, map) = linear_part(&k, &a, &centers).unwrap();
        let xq = DVector::from_vec(q);
        let full = &a * kerncon::kernel::kernel_vector(&k, &xq, &centers).unwrap();
        let split = &abar * &xq + &a * map.eval(&xq).unwrap();
        prop_assert!((full - split).amax() <= 1e-10 * (1.0 + a.amax() * 100.0));
    }

    #[test]
    fn power_radicand_lies_between_zero_and_kxx(x in points(2, 6), q in proptest::collection::vec(-3.0f64..3.0, 2), lambda in 1e-8f64..1.0) {
        let y = DMatrix::from_fn(2, 6, |r, c| x[(r, c)].sin());
        let data = DriftDataset::new(x, y).unwrap();
        let m = fit(&data, &KernelSpec::cubic(), lambda).unwrap();
        let xq = DVector::from_vec(q);
        let p = m.power_function(&xq).unwrap();
        let kxx = kerncon::kernel::eval_kernel(&KernelSpec::cubic(), &xq, &xq).unwrap();
        prop_assert!(p >= 0.0);
        prop_assert!(p * p <= kxx * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn prediction_is_linear_in_targets(x in points(2, 5), y1 in points(2, 5), y2 in points(2, 5), s in -2.0f64..2.0) {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let m1 = fit(&DriftDataset::new(x.clone(), y1.clone()).unwrap(), &k, 1e-3).unwrap();
        let m2 = fit(&DriftDataset::new(x.clone(), y2.clone()).unwrap(), &k, 1e-3).unwrap();
        let m3 = fit(&DriftDataset::new(x, &y1 + &y2 * s).unwrap(), &k, 1e-3).unwrap();
        let expect = m1.coeffs() + m2.coeffs() * s;
        prop_assert!((m3.coeffs() - expect).amax() <= 1e-6 * (1.0 + m3.coeffs().amax()));
    }
}
