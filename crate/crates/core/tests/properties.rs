use num_complex::Complex64 as C;
use proptest::prelude::*;
use rfmix::laws::{ShapeParams, SpectralLaw};
use rfmix::moments::MomentTable;
use rfmix::risk::{
    best_single_activation, mixture_search, mixture_test_error, predict_test_error, predict_train_error,
    MixtureGrid, TaskSpec,
};
use rfmix::sce::{closed_form_mp, solve_sce, SceProblem, SolverOptions};

fn problem(eta: f64, ratio: f64, phi: f64, psi: f64) -> SceProblem {
    let shape = ShapeParams::new(phi, psi).unwrap();
    SceProblem::new(MomentTable::single(eta, ratio * eta).unwrap(), SpectralLaw::marchenko_pastur(phi, 1.0), shape).unwrap()
}

fn config() -> ProptestConfig {
    ProptestConfig { cases: 24, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn transform_is_herglotz_and_conjugate_symmetric(
        eta in 0.2f64..3.0, ratio in 0.0f64..1.0, phi in 0.2f64..4.0, psi in 0.2f64..4.0,
        re in -3.0f64..6.0, im in 0.05f64..3.0,
    ) {
        let p = problem(eta, ratio, phi, psi);
        let opts = SolverOptions::default();
        let up = solve_sce(&p, C::new(re, im), &opts).unwrap();
        let down = solve_sce(&p, C::new(re, -im), &opts).unwrap();
        prop_assert!(up.s.im > 0.0 && up.s_tilde.im > 0.0);
        prop_assert!((up.s - down.s.conj()).norm() < 1e-9 * (1.0 + up.s.norm()));
        prop_assert!((up.s_tilde - down.s_tilde.conj()).norm() < 1e-9 * (1.0 + up.s_tilde.norm()));
    }

    #[test]
    fn scaling_the_moments_rescales_the_spectrum(
        eta in 0.2f64..3.0, ratio in 0.0f64..1.0, phi in 0.2f64..4.0, psi in 0.2f64..4.0, c in 0.3f64..3.0,
    ) {
        let p = problem(eta, ratio, phi, psi);
        let scaled = SceProblem { moments: p.moments.rescaled(c), ..p.clone() };
        let z = C::new(0.4, 0.7);
        let c2 = c * c;
        let a = solve_sce(&scaled, z, &SolverOptions::default()).unwrap().s;
        let b = solve_sce(&p, z / c2, &SolverOptions::default()).unwrap().s / c2;
        prop_assert!((a - b).norm() < 1e-8 * (1.0 + b.norm()), "{a} vs {b}");
    }

    #[test]
    fn closed_form_agrees_with_iteration(
        eta in 0.2f64..3.0, ratio in 0.0f64..1.0, phi_frac in 0.1f64..1.0, psi in 0.2f64..1.0, g in 0.05f64..3.0,
    ) {
        let p = problem(eta, ratio, phi_frac * psi, psi);
        let z = C::new(-g, 0.0);
        let a = solve_sce(&p, z, &SolverOptions::default()).unwrap();
        let b = closed_form_mp(&p, z).unwrap();
        prop_assert!((a.s - b.s).norm() < 1e-8 * (1.0 + a.s.norm()));
    }

    #[test]
    fn far_field_behaves_like_minus_one_over_z(
        eta in 0.2f64..3.0, ratio in 0.0f64..1.0, phi in 0.2f64..4.0, psi in 0.2f64..4.0,
    ) {
        let p = problem(eta, ratio, phi, psi);
        let z = C::new(0.0, 1e3);
        let s = solve_sce(&p, z, &SolverOptions::default()).unwrap().s;
        prop_assert!((s * z + 1.0).norm() < 1e-2);
    }

    #[test]
    fn training_error_grows_with_ridge(
        eta in 0.5f64..2.0, ratio in 0.0f64..1.0, phi in 0.3f64..3.0, psi in 0.3f64..3.0,
        g in 0.05f64..2.0, sigma_eps in 0.0f64..1.0,
    ) {
        let p = problem(eta, ratio, phi, psi);
        let lo = predict_train_error(&p, &TaskSpec::autoencoder(1.0, sigma_eps, g)).unwrap().e_train;
        let hi = predict_train_error(&p, &TaskSpec::autoencoder(1.0, sigma_eps, 1.5 * g)).unwrap().e_train;
        prop_assert!(hi >= lo - 1e-9, "{lo} then {hi}");
    }

    #[test]
    fn mixture_with_no_nonlinear_weight_is_linear(
        phi in 0.3f64..3.0, psi in 0.05f64..2.0, g in 0.05f64..2.0, z in 0.0f64..1.0,
    ) {
        let shape = ShapeParams::new(phi, psi).unwrap();
        let a = mixture_test_error(shape, 1.0, g, 0.0, z).unwrap();
        let lin = problem(0.5, 1.0, phi, psi);
        let b = predict_test_error(&lin, &TaskSpec::linear_teacher(1.0, g)).unwrap().e_test.unwrap();
        prop_assert!((a - b).abs() < 1e-8 * (1.0 + b));
    }

    #[test]
    fn improving_flags_match_the_baseline(phi in 0.3f64..2.0, psi in 0.05f64..1.0, g in 0.05f64..1.0) {
        let shape = ShapeParams::new(phi, psi).unwrap();
        let grid = MixtureGrid {
            p_values: vec![0.2, 0.6, 0.9],
            zeta1_values: vec![0.0, 0.3, 0.5],
            single_zetas: (0..=20).map(|i| i as f64 / 20.0).collect(),
        };
        let search = mixture_search(shape, 2.0, g, &grid).unwrap();
        let base = best_single_activation(shape, 2.0, g, &grid.single_zetas).unwrap();
        prop_assert_eq!(search.baseline.best_e_test, base.best_e_test);
        for pt in &search.ranked {
            prop_assert_eq!(pt.improving, pt.e_test < base.best_e_test - 1e-9 * base.best_e_test.abs().max(1.0));
        }
        prop_assert!(search.ranked.windows(2).all(|w| w[0].e_test <= w[1].e_test));
    }
}
