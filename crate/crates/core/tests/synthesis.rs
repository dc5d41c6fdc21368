use nalgebra::DMatrix;
use proptest::prelude::*;

use kerncon::linalg::{max_eigenvalue, min_eigenvalue, spectral_norm};
use kerncon::pipeline::config::PipelineConfig;
use kerncon::pipeline::{data_from_fixture, run_fit, run_synthesis, SynthStage};
use kerncon::synthesis::{
    assemble_lmi, petersen_check, synthesize_with, verify_robust_condition, SynthesisOptions,
};
use kerncon::{load_fixture, synthesize, Error, SynthesisProblem};

fn fixture_stage() -> SynthStage {
    let cfg = PipelineConfig::default();
    let f = load_fixture("paper-sec4").unwrap();
    run_synthesis(&cfg, run_fit(&cfg, data_from_fixture(&f)).unwrap()).unwrap()
}

fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(r, c, v)
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[test]
fn fixture_synthesis_values() {
    let s = fixture_stage();
    let (p, r) = (&s.problem, &s.result);
    assert!((p.delta_scale - 4.9238e-3).abs() < 1e-6, "Δ = {}", p.delta_scale);
    assert!(r.residual.row(0).norm() < 1e-2);
    assert!((r.kbar[(0, 1)] + 0.7519).abs() < 2e-2, "K̄ = {}", r.kbar);
    assert!((spectral_radius(&r.closed_loop_linear(p)) - 0.3531).abs() < 1e-3);
}

#[test]
fn fixture_solution_satisfies_its_constraints() {
    let s = fixture_stage();
    let (p, r) = (&s.problem, &s.result);
    assert!(min_eigenvalue(&(&r.p - &p.q)) >= -1e-7);
    assert!(assemble_lmi(p, &r.p, &r.y, r.eps).unwrap().min_eigenvalue() >= 0.0);
    assert!((&r.kbar * &r.p - &r.y).amax() < 1e-10);
    assert!(r.eps > 0.0);
    let rep = verify_robust_condition(r, p, 500, 3).unwrap();
    assert_eq!(rep.violations, 0, "{rep:?}");
}

#[test]
fn cancellation_gain_is_locally_optimal() {
    let s = fixture_stage();
    let (p, r) = (&s.problem, &s.result);
    let g = p.input_gain();
    let base = spectral_norm(&(&p.ahat + &g * &r.khat));
    assert!((base - spectral_norm(&r.residual)).abs() < 1e-12);
    for j in 0..r.khat.ncols() {
        for h in [1e-4, -1e-4] {
            let mut k = r.khat.clone();
            k[(0, j)] += h;
            assert!(spectral_norm(&(&p.ahat + &g * k)) >= base - 1e-7);
        }
    }
}

#[test]
fn scalar_uncontrolled_oracle() {
    // x⁺ = 0.5x with no input authority: P ≥ Q/(1 − a²) = 4/3
    let p = SynthesisProblem::from_parts(
        m(1, 1, &[0.5]),
        DMatrix::zeros(1, 0),
        m(1, 3, &[0.0, 0.0, 0.0]),
        m(1, 3, &[1.0, -0.5, 0.25]),
        0.0,
        m(1, 1, &[1.0]),
        1.0,
        None,
    )
    .unwrap();
    let r = synthesize(&p).unwrap();
    assert!((r.p[(0, 0)] - 4.0 / 3.0).abs() < 1e-6, "P = {}", r.p);
}

#[test]
fn deadbeat_oracle_gives_p_equal_to_q() {
    // full input authority on an unstable plant: K̄ = −Ā is reachable, so ‖P‖ bottoms out at Q = I
    let u0 = m(2, 3, &[1.0, 0.2, -0.7, 0.3, -1.0, 0.4]);
    let p = SynthesisProblem::from_parts(
        m(2, 2, &[1.0, 0.5, 0.0, 1.2]),
        DMatrix::zeros(2, 0),
        u0.clone(),
        u0,
        0.0,
        DMatrix::identity(2, 2),
        1.0,
        None,
    )
    .unwrap();
    let r = synthesize(&p).unwrap();
    assert!((&r.p - DMatrix::identity(2, 2)).amax() < 1e-4, "P = {}", r.p);
    assert!(spectral_radius(&r.closed_loop_linear(&p)) < 1e-2);
}

#[test]
fn large_uncertainty_is_infeasible() {
    let u0 = m(1, 3, &[1.0, -0.5, 0.25]);
    let p = SynthesisProblem::from_parts(
        m(1, 1, &[2.0]),
        DMatrix::zeros(1, 0),
        u0.clone(),
        u0,
        50.0,
        m(1, 1, &[1.0]),
        1.0,
        None,
    )
    .unwrap();
    match synthesize(&p) {
        Err(Error::Infeasible { .. }) => {}
        other => panic!("expected infeasible, got {other:?}"),
    }
}

#[test]
fn zero_alpha_still_returns_a_feasible_point() {
    let s = fixture_stage();
    let mut p = s.problem.clone();
    p.alpha = 0.0;
    let r = synthesize_with(&p, &SynthesisOptions::default()).unwrap();
    assert!(assemble_lmi(&p, &r.p, &r.y, r.eps).unwrap().min_eigenvalue() >= 0.0);
}

fn mat(r: usize, c: usize, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(lo..hi, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn petersen_inequality_holds(e in mat(4, 2, -1.0, 1.0), f in mat(2, 4, -1.0, 1.0), delta in mat(2, 3, -0.5, 0.5), eps in 0.05f64..5.0, seed in 0u64..1000) {
        let rep = petersen_check(&e, &f, &delta, eps, 100, seed).unwrap();
        prop_assert_eq!(rep.violations, 0);
    }

    #[test]
    fn feasible_synthesis_is_robust(a in mat(2, 2, -1.2, 1.2), u0 in mat(1, 4, -1.0, 1.0), b in mat(2, 1, -1.0, 1.0), delta in 0.0f64..0.05) {
        prop_assume!(kerncon::check_excitation(&u0, 1e-3).full_row_rank);
        let p = SynthesisProblem::from_parts(a, DMatrix::zeros(2, 0), &b * &u0, u0, delta, DMatrix::identity(2, 2), 1.0, None).unwrap();
        if let Ok(r) = synthesize(&p) {
            prop_assert!(min_eigenvalue(&(&r.p - &p.q)) >= -1e-7);
            let rep = verify_robust_condition(&r, &p, 50, 1).unwrap();
            prop_assert!(rep.max_eigenvalue <= 1e-7 * (1.0 + max_eigenvalue(&r.p)), "{:?}", rep);
        }
    }
}
