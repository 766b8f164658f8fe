mod common;

use mirrorflow::dynamics::Network;
use mirrorflow::graph::{cycle_graph, random_connected_graph, spectral_decomposition};
use mirrorflow::stability::charpoly::{characteristic_polynomial, polynomial_roots, spectrum_distance};
use mirrorflow::stability::{
    assemble_linearization, check_hl_positive_definite, check_stability, determinant_check, eigenvalues,
    empirical_rate_vs_theory, pencil_probe, LinearizedSystem, SignedLogDet,
};
use mirrorflow::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use common::{both_generators, planted_instance};

fn system(n: usize, d: usize, seed: u64, entropy: bool) -> LinearizedSystem {
    let costs = planted_instance(n, d, seed);
    let graph = random_connected_graph(n, 0.5, seed).unwrap();
    let dgf = both_generators(d)[entropy as usize];
    let net = Network::new(&costs, &graph, &dgf).unwrap();
    let spectral = spectral_decomposition(&graph).unwrap();
    assemble_linearization(&net, &spectral, &costs.closed_form_optimum().unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn small_matrices_match_their_characteristic_polynomial(size in 3usize..5, entries in prop::collection::vec(-3.0f64..3.0, 16)) {
        let m = DMatrix::from_iterator(size, size, entries.into_iter().take(size * size));
        let eig = eigenvalues(&m).unwrap();
        let roots = polynomial_roots(&characteristic_polynomial(&m));
        // Generic matrices only: near-defective spectra are ill-conditioned for both routes.
        let gap = (0..size).flat_map(|i| (i + 1..size).map(move |j| (i, j)))
            .map(|(i, j)| (eig[i] - eig[j]).norm())
            .fold(f64::INFINITY, f64::min);
        prop_assume!(gap > 1e-3);
        prop_assert!(spectrum_distance(&eig, &roots) < 1e-8);
    }

    #[test]
    fn spectrum_of_m_is_certified(n in 2usize..6, d in 1usize..4, seed in 0u64..500, entropy in any::<bool>()) {
        let sys = system(n, d, seed, entropy);
        prop_assert_eq!(sys.order(), (2 * n - 1) * d);
        let report = check_stability(&sys, None).unwrap();
        prop_assert_eq!(report.eigenvalues.len(), (2 * n - 1) * d);
        prop_assert!(report.all_positive && report.hl_positive_definite && report.det_sign_positive);
        prop_assert!(report.rate_estimate > 0.0);
        prop_assert!(report.spectrum_determinant_agrees);
        prop_assert!(report.conjugate_pairs_close(1e-9));
        prop_assert!(report.violations.is_empty());
    }

    #[test]
    fn every_eigenvalue_solves_its_pencil_quadratic(n in 2usize..5, d in 1usize..3, seed in 0u64..500, entropy in any::<bool>()) {
        let sys = system(n, d, seed, entropy);
        let report = check_stability(&sys, None).unwrap();
        for lambda in report.spectrum() {
            let probe = pencil_probe(&sys, lambda).unwrap();
            prop_assert!(probe.residual < 1e-6, "residual {}", probe.residual);
            prop_assert!(probe.p > 0.0 && probe.q > 0.0 && probe.l >= -1e-12);
            prop_assert!((probe.closest_prediction() - lambda).norm() < 1e-6 * lambda.norm().max(1.0));
        }
    }
}

#[test]
fn hl_smallest_eigenvalue_matches_an_independent_solver() {
    for seed in 0..10 {
        let sys = system(4, 3, seed, seed % 2 == 1);
        let check = check_hl_positive_definite(&sys.h, &sys.l).unwrap();
        // For a symmetric positive definite matrix the singular values are the eigenvalues.
        let sv = sys.h_plus_l().svd(false, false).singular_values.min();
        assert!((check.smallest_eigenvalue - sv).abs() < 1e-9 * sv.max(1.0));
        assert!(check.positive_definite && check.h_psd && check.l_psd);
    }
}

#[test]
fn consensus_direction_sees_global_curvature() {
    let (n, d) = (4, 3);
    let costs = planted_instance(n, d, 3);
    let sys = system(n, d, 3, false);
    let x_star = costs.closed_form_optimum().unwrap();
    let hessian = costs.global_hessian(x_star.as_slice()).unwrap();
    let u = DVector::from_vec(vec![0.3, -1.0, 0.5]);
    let v = DVector::from_iterator(n * d, (0..n).flat_map(|_| u.iter().copied()));
    let lhs = (v.transpose() * sys.h_plus_l() * &v)[(0, 0)];
    let rhs = (u.transpose() * hessian * &u)[(0, 0)];
    assert!((lhs - rhs).abs() < 1e-10 * rhs.abs());
    assert!(rhs > 0.0);
}

#[test]
fn determinant_scales_with_d() {
    let mut sys = system(3, 2, 9, false);
    let base = determinant_check(&sys).unwrap();
    let c: f64 = 2.5;
    let nd = sys.d.nrows();
    // Scaling D scales the primal rows of M.
    sys.d *= c;
    sys.d_inv /= c;
    for i in 0..nd {
        for j in 0..sys.m.ncols() {
            sys.m[(i, j)] *= c;
        }
    }
    let scaled = determinant_check(&sys).unwrap();
    assert!(scaled.positive && scaled.agree);
    assert!((scaled.det_d.log_abs - base.det_d.log_abs - nd as f64 * c.ln()).abs() < 1e-10);
    assert!((scaled.direct.log_abs - base.direct.log_abs - nd as f64 * c.ln()).abs() < 1e-9);
}

#[test]
fn singular_hl_is_a_determinant_error() {
    let mut sys = system(3, 1, 2, false);
    sys.h.fill(0.0);
    assert!(matches!(determinant_check(&sys), Err(Error::SingularFactor(_))));
    let report = check_stability(&sys, None).unwrap_or_else(|e| panic!("{e}"));
    assert!(!report.hl_positive_definite);
}

#[test]
fn log_determinant_of_product() {
    let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
    let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let ab = SignedLogDet::of(&(&a * &b));
    let prod = SignedLogDet::of(&a).times(SignedLogDet::of(&b));
    assert!(ab.agrees_with(&prod, 1e-14));
    assert_eq!(ab.sign, -1.0);
}

/// `x' = -M x` integrated with small Euler steps from a random start.
fn linear_decay(m: &DMatrix<f64>, dt: f64, steps: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DVector::from_fn(m.nrows(), |_, _| {
        let g: f64 = StandardNormal.sample(&mut rng);
        1e-3 * g
    });
    let mut times = vec![0.0];
    let mut norms = vec![x.norm()];
    for k in 1..=steps {
        x -= dt * (m * &x);
        if k % 10 == 0 {
            times.push(k as f64 * dt);
            norms.push(x.norm());
        }
    }
    (times, norms)
}

#[test]
fn linear_system_rate_matches_spectrum() {
    let sys = system(3, 1, 4, false);
    let report = check_stability(&sys, None).unwrap();
    let spectrum = report.spectrum();
    assert!(spectrum[1].re > 1.5 * spectrum[0].re, "spectrum not well separated: {spectrum:?}");
    let dt = 1e-3 / report.matrix_norm;
    let horizon = 30.0 / report.min_real_part;
    let (times, norms) = linear_decay(&sys.m, dt.min(horizon / 1e5), (horizon / dt.min(horizon / 1e5)) as usize, 1);
    let cmp = empirical_rate_vs_theory(&times, &norms, report.rate_estimate, 1.0, 1e-300).unwrap();
    assert!((cmp.ratio - 1.0).abs() < 0.10, "{cmp:?}");
}

#[test]
fn trajectory_outside_ball_has_no_tail() {
    let times: Vec<f64> = (0..100).map(f64::from).collect();
    let far = vec![5.0; 100];
    assert!(matches!(
        empirical_rate_vs_theory(&times, &far, 1.0, 1e-2, 1e-13),
        Err(Error::InsufficientTail(_))
    ));
}

#[test]
fn shared_null_instances_fail_the_hl_check() {
    for seed in 0..5 {
        let (costs, u) = mirrorflow::objective::shared_null_costset(3, 3, seed).unwrap();
        let graph = cycle_graph(3).unwrap();
        let dgf = mirrorflow::mirror::DistanceGenerator::euclidean(3);
        let net = Network::new(&costs, &graph, &dgf).unwrap();
        let spectral = spectral_decomposition(&graph).unwrap();
        let sys = assemble_linearization(&net, &spectral, &DVector::zeros(3)).unwrap();
        let report = check_stability(&sys, None).unwrap();
        assert!(!report.hl_positive_definite);
        assert!(!report.all_positive);
        assert!(report.violations.iter().any(|v| v.contains("H + L")));
        // The offending direction is consensus along u.
        let v = DVector::from_iterator(9, (0..3).flat_map(|_| u.iter().copied()));
        assert!((sys.h_plus_l() * v).norm() < 1e-10);
    }
}
