//! Small hand-checkable systems and structures, each compared against closed forms or an
//! independent computation.

mod common;

use common::*;
use ivp_core::dp::{calibrate_sigma_omega, check_dp, kappa, q_function, q_inverse, DpBudget};
use ivp_core::generic::{generic_node_privacy, generic_privacy_index, GenericSampler};
use ivp_core::intrinsic::{node_private, privacy_index, whole_vector_private, Condition};
use ivp_core::obsv::extended_observability;
use ivp_core::sim::{mle_attack, simulate};
use ivp_core::sysmodel::{
    instantiate_matrices, sample_configuration, Configuration, DisclosureSet, LinearSystem, NoiseModel,
};
use nalgebra::DMatrix;

fn assert_matrix_close(got: &DMatrix<f64>, want: &DMatrix<f64>, tol: f64) {
    assert_eq!(got.shape(), want.shape());
    let err = (got - want).abs().max();
    assert!(err <= tol * (1.0 + want.abs().max()), "max deviation {err:e}\ngot {got}\nwant {want}");
}

#[test]
fn summed_output_hides_the_state_sum_direction() {
    let sys = summed_output();
    let whole = whole_vector_private(&sys).unwrap();
    assert!(whole.private);
    let eta = whole.eta.unwrap();
    // The kernel of [1 1; 0 0] is spanned by (1, -1).
    assert!((eta[0] + eta[1]).abs() < 1e-12);
    assert!((eta.norm() - 1.0).abs() < 1e-12);

    let index = privacy_index(&sys).unwrap();
    assert_eq!((index.rank_oob, index.index), (1, 0));

    for node in 0..2 {
        assert!(node_private(&sys, node, &DisclosureSet::empty(), Condition::All).unwrap().private);
        let other = DisclosureSet::new(vec![1 - node], 2).unwrap();
        assert!(!node_private(&sys, node, &other, Condition::All).unwrap().private);
    }
}

#[test]
fn summed_output_has_no_dp_guarantee_without_measurement_noise() {
    let budget = DpBudget::new(1.0, 0.05, 1.0, 1, 1).unwrap();
    let v = check_dp(&summed_output(), &budget, false).unwrap();
    assert!(!v.satisfied);
    assert!(v.lhs.abs() < 1e-12);
}

#[test]
fn summed_output_attack_is_not_identifiable() {
    let sys = summed_output();
    let batch = simulate(&sys, &vector(&[2.0, 1.0]), 50, 1, 11).unwrap();
    let r = mle_attack(&sys, &batch).unwrap();
    assert!(!r.identifiable);
    assert!(r.covariance_estimate.is_none());
    // y0 is noiseless, so the sum is recovered exactly.
    assert!((r.x0_hat[0] + r.x0_hat[1] - 3.0).abs() < 1e-9);
}

#[test]
fn first_state_output_is_observable_and_calibrates_to_kappa() {
    let sys = first_state_output();
    assert!(!whole_vector_private(&sys).unwrap().private);
    assert_eq!(privacy_index(&sys).unwrap().index, -1);

    // With T = 1, O_T is the identity, so the floor is d sqrt(N) kappa.
    let o_t = extended_observability(sys.a(), sys.c(), 1).unwrap();
    assert_matrix_close(&o_t, &DMatrix::identity(2, 2), 0.0);
    for (eps, delta, d, n) in [(1.0, 0.05, 1.0, 1), (0.5, 0.01, 2.0, 4)] {
        let budget = DpBudget::new(eps, delta, d, n, 1).unwrap();
        let cal = calibrate_sigma_omega(&sys, &budget).unwrap();
        let expected = d * (n as f64).sqrt() * kappa(eps, delta).unwrap();
        assert!((cal.sigma_omega_floor - expected).abs() < 1e-12 * expected);
    }
}

#[test]
fn first_state_output_dp_condition_tracks_measurement_noise() {
    let budget = DpBudget::new(1.0, 0.05, 1.0, 1, 1).unwrap();
    let k = kappa(1.0, 0.05).unwrap();
    let at = |sigma_omega: f64| {
        let sys = two_state(&[1.0, 0.0], 1.0, sigma_omega);
        check_dp(&sys, &budget, false).unwrap().satisfied
    };
    assert!(!at(1.0));
    assert!(at(k * 1.0001));
    assert!(!at(k * 0.999));
}

#[test]
fn normal_tail_matches_quadrature() {
    for w in [-2.0, -0.3, 0.0, 0.5, 1.6449, 3.0, 6.0] {
        let want = oracle_q(w);
        assert!((q_function(w) - want).abs() < 1e-10 * want.max(1e-300), "Q({w})");
    }
    assert!((q_function(1.6449) - 0.05).abs() < 1e-5);
}

#[test]
fn tail_inverse_matches_bisection() {
    for p in [0.5, 0.3, 0.05, 1e-3, 1e-9] {
        let (mut lo, mut hi) = (0.0_f64, 40.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if oracle_q(mid) > p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let got = q_inverse(p).unwrap();
        assert!((got - 0.5 * (lo + hi)).abs() < 1e-7, "Q^-1({p}) = {got}, bisection {lo}");
    }
}

#[test]
fn kappa_at_unit_epsilon_and_five_percent() {
    // Q^-1(0.05) = 1.6448536269514722 (standard table value).
    let w = 1.644_853_626_951_472_2_f64;
    let want = (w + (w * w + 2.0).sqrt()) / 2.0;
    let got = kappa(1.0, 0.05).unwrap();
    assert!((got - want).abs() < 1e-10);
    assert!((got - 1.9075).abs() < 1e-3);
}

/// Reads a structural weight from the instantiated matrices, 1-based like the symbols.
struct Weights {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl Weights {
    fn a(&self, i: usize, j: usize) -> f64 {
        self.a[(i - 1, j - 1)]
    }

    fn c(&self, s: usize, j: usize) -> f64 {
        self.c[(s - 1, j - 1)]
    }
}

#[test]
fn three_node_observability_entries_are_the_expected_polynomials() {
    let s = three_node();
    for seed in 0..5 {
        let (a, c) = instantiate_matrices(&s, &sample_configuration(&s, seed)).unwrap();
        let w = Weights { a: a.clone(), c: c.clone() };
        let (a12, a21, a23) = (w.a(1, 2), w.a(2, 1), w.a(2, 3));
        let (c11, c13) = (w.c(1, 1), w.c(1, 3));
        let want = DMatrix::from_row_slice(
            3,
            3,
            &[c11, 0.0, c13, 0.0, c11 * a12, 0.0, c11 * a12 * a21, 0.0, c11 * a12 * a23],
        );
        assert_matrix_close(&extended_observability(&a, &c, 2).unwrap(), &want, 1e-14);
        assert_matrix_close(&oracle_stack(&a, &c, 2), &want, 1e-14);
    }
}

#[test]
fn four_node_observability_entries_are_the_expected_polynomials() {
    let s = four_node();
    for seed in 0..5 {
        let (a, c) = instantiate_matrices(&s, &sample_configuration(&s, seed)).unwrap();
        let w = Weights { a: a.clone(), c: c.clone() };
        let (a11, a12, a14, a22, a23) = (w.a(1, 1), w.a(1, 2), w.a(1, 4), w.a(2, 2), w.a(2, 3));
        let (c11, c13) = (w.c(1, 1), w.c(1, 3));
        let star = c11 * a12 * (a11 * a11 + a11 * a22 + a22 * a22);
        let query = c11 * a12 * a23 * (a11 + a22);
        #[rustfmt::skip]
        let want = DMatrix::from_row_slice(4, 4, &[
            c11, 0.0, c13, 0.0,
            c11 * a11, c11 * a12, 0.0, c11 * a14,
            c11 * a11 * a11, c11 * a12 * (a11 + a22), c11 * a12 * a23, c11 * a11 * a14,
            c11 * a11.powi(3), star, query, c11 * a11 * a11 * a14,
        ]);
        assert_matrix_close(&extended_observability(&a, &c, 3).unwrap(), &want, 1e-14);
    }
}

#[test]
fn four_node_special_weights_sit_on_the_exception_surface() {
    let s = four_node();
    let (a, c) = instantiate_matrices(&s, &Configuration(FOUR_NODE_SPECIAL.to_vec())).unwrap();
    let w = Weights { a, c };
    let surface = w.c(1, 3) * w.a(1, 1) * w.a(2, 2) + w.c(1, 1) * w.a(1, 2) * w.a(2, 3);
    assert_eq!(surface, 0.0);
    assert_ne!(w.c(1, 1) * w.a(1, 4) * w.a(2, 2), 0.0);
}

#[test]
fn three_node_first_node_is_generically_exposed_but_private_on_the_surface() {
    let s = three_node();
    let sampler = GenericSampler::new(8, 21).unwrap();
    let generic = generic_node_privacy(&s, 0, &DisclosureSet::empty(), &sampler).unwrap();
    assert!(!generic.generically_private);
    assert_eq!(generic.estimate.n_p_ob, 3);

    // c11 a23 = c13 a21 with every edge present.
    let mut a = DMatrix::zeros(3, 3);
    a[(0, 1)] = 0.7;
    a[(1, 0)] = 2.0;
    a[(1, 2)] = 1.0;
    let c = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.5]);
    let sys = LinearSystem::new(a, c, NoiseModel::iid(0.0, 0.0).unwrap()).unwrap();
    let v = node_private(&sys, 0, &DisclosureSet::empty(), Condition::All).unwrap();
    assert!(v.private);
    // The certifying direction moves x1 and x3 with c13 dx3 = -c11 dx1.
    let eta = v.eta.unwrap();
    assert!(eta[0].abs() > 1e-6);
    assert!((eta[0] + 0.5 * eta[2]).abs() < 1e-10);
}

#[test]
fn four_node_fourth_node_is_generically_private() {
    let sampler = GenericSampler::new(8, 22).unwrap();
    let v = generic_node_privacy(&four_node(), 3, &DisclosureSet::empty(), &sampler).unwrap();
    assert!(v.generically_private);
    assert!(v.conditions_consistent);
    assert_eq!(v.estimate.agreement, 1.0);

    let index = generic_privacy_index(&four_node(), &sampler).unwrap();
    assert_eq!(index.estimate.n_p_ob, 3);
    assert_eq!(index.report.index, 0);
}
