use grav1d::combinat::{binomial, factorial_q, q};
use grav1d::constraints::{virasoro, Family};
use grav1d::npoint::{genus_part, l_point_genus0, n_point, Genus0Jets, LoopSlot};
use grav1d::partition::{closed_form_z, free_energy_full};
use grav1d::spectral::*;
use grav1d::{Monomial, Rational, Series, TruncationSpec};
use num_bigint::BigInt;
use num_traits::{One, Zero};
use proptest::prelude::*;

/// `I_0` as the fixed point of `x = Σ_n t_n x^n / n!`.
fn i0_oracle(spec: TruncationSpec) -> Series {
    let mut x = Series::zero(spec);
    for _ in 0..=spec.dmax {
        let mut next = Series::zero(spec);
        let mut xp = Series::one(spec);
        for n in 0..=spec.kmax {
            let tn = Series::var(spec, n).unwrap();
            next = &next + &(&tn * &xp).scale(&(Rational::one() / factorial_q(n as u64)));
            xp = &xp * &x;
        }
        x = next;
    }
    x
}

/// `(n+1)! ∂F_0/∂t_n` from the genus-zero slice of `log Z`, read in `spec`.
fn gradient_oracle(f: &Series, n: usize, spec: TruncationSpec) -> Series {
    let f0 = f.slice_l(-1).shift_l(1);
    f0.derive(n).unwrap().scale(&factorial_q(n as u64 + 1)).retain(|m, _| m.deg() <= spec.dmax).retruncate(spec)
}

fn t(spec: TruncationSpec, pairs: &[(usize, u32)], c: Rational) -> Series {
    Series::monomial(spec, Monomial::from_sparse(pairs, 0), c)
}

#[test]
fn special_y_examples() {
    let y = special_y(4, 5, 6).unwrap();
    let spec = y.spec();
    assert_eq!(y.w(0), i0_oracle(spec));
    assert_eq!(y.minus[0], i0_oracle(spec).scale(&q(2)));
    assert_eq!(y.plus[1], &t(spec, &[(1, 1)], q(1)) - &Series::one(spec));
    for n in 0..=4 {
        let expected = t(spec, &[(n, 1)], Rational::one() / factorial_q(n as u64));
        let delta = if n == 1 { Series::one(spec) } else { Series::zero(spec) };
        assert_eq!(y.plus[n], &expected - &delta);
    }
    assert_eq!(y.pole, q(2));
    let at_zero = |s: &Series| s.coeff(&Monomial::one());
    let consts: Vec<Rational> = y.plus.iter().map(at_zero).collect();
    assert_eq!(consts, vec![q(0), q(-1), q(0), q(0), q(0)]);
    assert!(y.minus.iter().all(|s| at_zero(s).is_zero()));
}

#[test]
fn minus_part_is_the_genus_zero_one_point_function() {
    let f = free_energy_full(4, 6).unwrap();
    let w1 = genus_part(&n_point(&f, LoopSlot::z(6), 1).unwrap(), 0);
    let y = special_y(4, 5, 6).unwrap();
    let spec = y.spec();
    for e in 1..=6 {
        let expected = w1.coeff(&[-e]).retain(|m, _| m.deg() <= 5).retruncate(spec);
        assert_eq!(y.w01().coeff(&[-e]), expected, "z^-{e}");
    }
    let wide = free_energy_full(4 + 6, 6).unwrap();
    for n in 0..y.minus.len() {
        let g = gradient_oracle(&wide, n, spec).retain(|m, _| m.max_index().is_none_or(|i| i <= 4));
        assert_eq!(y.w(n), g, "w_{n}");
    }
}

#[test]
fn t0_line_is_the_signed_catalan_deformation() {
    let y = special_y(0, 6, 8).unwrap();
    let spec = y.spec();
    assert_eq!(y.plus, vec![t(spec, &[(0, 1)], q(1)), Series::constant(spec, q(-1))]);
    for (n, s) in y.minus.iter().enumerate() {
        let expected = if n + 1 <= 6 { t(spec, &[(0, n as u32 + 1)], q(2)) } else { Series::zero(spec) };
        assert_eq!(*s, expected);
    }
    let half = y.half_y2_minus();
    for k in 0..=6i32 {
        let expected = t(spec, &[(0, k as u32)], q(k as i64 + 1));
        assert_eq!(half.coeff(&[-k - 2]), expected);
    }
    assert!(half.coeff(&[-1]).is_zero());
    assert!(check_y2_minus(&y).unwrap().is_zero());
}

#[test]
fn t_zero_square_is_inverse_square() {
    let y = special_y(3, 4, 6).unwrap();
    let half = y.half_y2_minus();
    for (e, s) in half.terms() {
        let c = s.coeff(&Monomial::one());
        let expected = if e[0] == -2 { q(1) } else { q(0) };
        assert_eq!(c, expected, "z^{}", e[0]);
    }
}

#[test]
fn half_y_squared_minus_matches_w01_squared_at_6_6() {
    let y = special_y(6, 6, 8).unwrap();
    assert!(check_y2_minus(&y).unwrap().is_zero());
    let f = free_energy_full(6, 8).unwrap();
    let jets = Genus0Jets::new(&f, 2).unwrap();
    let w = l_point_genus0(&jets, 1, 8).unwrap();
    let w2 = w.checked_mul(&w).unwrap();
    let half = y.half_y2_minus();
    for e in 1..=8 {
        let expected = w2.coeff(&[-e]).retain(|m, _| m.deg() <= 6).retruncate(y.spec());
        assert_eq!(half.coeff(&[-e]), expected, "z^-{e}");
    }
}

#[test]
fn breaking_the_deformation_breaks_the_identity() {
    let mut y = special_y(3, 4, 5).unwrap();
    let spec = y.spec();
    y.minus[1] = &y.minus[1] + &t(spec, &[(0, 1), (2, 1)], q(1));
    assert!(!check_y2_minus(&y).unwrap().is_zero());
}

#[test]
fn uniqueness_shape_and_values() {
    let ws = uniqueness_solve(5, 6).unwrap();
    assert_eq!(ws.len(), 6);
    let spec = ws[0].spec();
    assert_eq!(ws[0].retain(|m, _| m.deg() == 1), t(spec, &[(0, 1)], q(1)));
    for (n, w) in ws.iter().enumerate() {
        assert!(w.retain(|m, _| m.deg() as usize <= n).is_zero(), "w_{n} has a low-degree part");
    }
    assert_eq!(ws[0].retain(|m, _| m.deg() == 2), t(spec, &[(0, 1), (1, 1)], q(1)));
    assert_eq!(ws[1].retain(|m, _| m.deg() == 2), t(spec, &[(0, 2)], q(1)));
    assert!(uniqueness_residuals(&ws).iter().all(Series::is_zero));
    let f = free_energy_full(5, 7).unwrap();
    for (n, w) in ws.iter().enumerate() {
        assert_eq!(substitute_v(w), gradient_oracle(&f, n, spec), "w_{n}");
    }
    assert_eq!(substitute_v(&ws[0]), i0_oracle(spec));
    assert!(uniqueness_report(5, 6).unwrap().all_ok());
}

#[test]
fn catalan_reversion_values() {
    let a = catalan_reversion(20).unwrap();
    for (n, c) in a.iter().enumerate() {
        let cat = Rational::new(binomial(2 * n as u64, n as u64), BigInt::from(n + 1));
        let sign = if n % 2 == 0 { q(1) } else { q(-1) };
        assert_eq!(*c, sign * cat);
    }
    assert_eq!(catalan_numbers(5).unwrap(), [1, 1, 2, 5, 14, 42].map(BigInt::from).to_vec());
    assert_eq!(&a[..4], &[q(1), q(-1), q(2), q(-5)]);
    assert!(catalan_reversion(21).is_err());
}

#[test]
fn catalan_round_trip() {
    let a = catalan_reversion(12).unwrap();
    let unit: Vec<Rational> = (0..13).map(|i| if i == 0 { q(1) } else { q(0) }).collect();
    let (first, second) = grav1d::spectral::catalan_round_trip(&a);
    assert_eq!(first, unit);
    assert_eq!(second, unit);
    let mut bad = a.clone();
    bad[4] += q(1);
    let (first, _) = grav1d::spectral::catalan_round_trip(&bad);
    assert_ne!(first, unit);
}

#[test]
fn beta_commutators() {
    let spec = mode_spec(4);
    for a in -5..=5 {
        for b in -5..=5 {
            let c = beta_commutator(BetaOperator::new(a), BetaOperator::new(b), spec).unwrap();
            if a + b != 0 || a == 0 {
                assert!(c.is_zero(), "[b_{a}, b_{b}]");
                continue;
            }
            let k = a.abs();
            let sign = if a > 0 { 1 } else { -1 };
            let expected = Series::constant(spec, q(2 * sign * k as i64));
            assert_eq!(c.len(), 1);
            assert_eq!(c.coeff(&[]), expected, "[b_{a}, b_{b}]");
        }
    }
}

#[test]
fn quadratic_coefficients_are_scaled_virasoro_operators() {
    let spec = TruncationSpec::new(5, 6, -3, 5).unwrap();
    let c = quantum_normalization(spec).unwrap();
    assert_eq!(c, q(Y_TILDE_NORMALIZATION));
    for m in -1..=4 {
        let qm = quadratic_coefficient(m, spec).unwrap();
        let lm = virasoro(m, Family::LTilde, spec).unwrap();
        assert_eq!(qm, lm.scale(&c), "m = {m}");
    }
}

#[test]
fn quantized_constraints_annihilate_z() {
    let z = closed_form_z(TruncationSpec::z_window(8, 8)).unwrap();
    let r = quantize_check(&z, 4).unwrap();
    assert!(r.all_ok(), "{r}");
    assert_eq!(r.len(), 1 + 2 * 6);
}

#[test]
fn propagator_and_vacuum() {
    let p = propagator(5).unwrap();
    assert_eq!(p.rational_at(&[-3, 1], &Monomial::one()), q(2));
    for (e, s) in p.terms() {
        let n = -e[0] - 2;
        assert_eq!(e[1], n);
        assert_eq!(*s, Series::constant(s.spec(), q(n as i64 + 1)));
    }
    assert_eq!(p.terms().count(), 6);
    let normal = two_point_vev(5, true).unwrap();
    let oscillators: Vec<_> = normal.terms().filter(|(e, _)| e.as_slice() != [-1, -1]).collect();
    assert!(oscillators.is_empty());
    assert_eq!(normal.rational_at(&[-1, -1], &Monomial::one()), q(2));
    let full = two_point_vev(5, false).unwrap();
    assert_eq!(full.checked_sub(&normal).unwrap(), p);
}

#[test]
fn spectral_suite_passes() {
    let r = spectral_report(4, 5, 6, 2).unwrap();
    assert!(r.all_ok(), "{r}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn perturbing_the_uniqueness_solution_is_detected(
        n in 0usize..5,
        exps in proptest::collection::vec(0u32..3, 5),
        c in -5i64..=5,
    ) {
        prop_assume!(c != 0);
        let mut ws = uniqueness_solve(4, 5).unwrap();
        let spec = ws[0].spec();
        let pairs: Vec<(usize, u32)> = exps.iter().enumerate().map(|(k, &e)| (k, e)).collect();
        let m = Monomial::from_sparse(&pairs, 0);
        prop_assume!(m.deg() <= 5);
        ws[n] = &ws[n] + &Series::monomial(spec, m, q(c));
        prop_assert!(uniqueness_residuals(&ws).iter().any(|r| !r.is_zero()));
    }

    #[test]
    fn y2_identity_holds_on_small_truncations(k in 0usize..4, d in 1u32..5, order in 1usize..6) {
        let y = special_y(k, d, order).unwrap();
        prop_assert!(check_y2_minus(&y).unwrap().is_zero());
    }

    #[test]
    fn modes_commute_off_the_diagonal(a in -6i32..=6, b in -6i32..=6) {
        prop_assume!(a + b != 0);
        let c = beta_commutator(BetaOperator::new(a), BetaOperator::new(b), mode_spec(5)).unwrap();
        prop_assert!(c.is_zero());
    }
}

#[test]
fn vacuum_expectation_uses_shifted_couplings() {
    let spec = mode_spec(3);
    let creator = BetaOperator::new(-2).operator(spec).unwrap();
    assert!(vacuum_expectation(&creator).unwrap().is_zero());
    let zero_mode = BetaOperator::new(0).operator(spec).unwrap();
    assert_eq!(vacuum_expectation(&zero_mode).unwrap(), Series::constant(spec, q(2)));
    let ann = BetaOperator::new(1).operator(spec).unwrap();
    let pair = ann.compose(&BetaOperator::new(-1).operator(spec).unwrap()).unwrap();
    assert_eq!(vacuum_expectation(&pair).unwrap(), Series::constant(spec, q(2)));
}
