use grav1d::combinat::{factorial_q, frac, q, set_partitions};
use grav1d::constraints::*;
use grav1d::partition::{closed_form_z, correlator, free_energy_full, CorrelatorKey};
use grav1d::{Monomial, Rational, Series, TruncationSpec};
use num_traits::One;
use proptest::prelude::*;

fn spec(kmax: usize, dmax: u32) -> TruncationSpec {
    TruncationSpec::new(kmax, dmax, -4, 8).unwrap()
}

fn t(s: TruncationSpec, pairs: &[(usize, u32)], c: Rational) -> Series {
    Series::monomial(s, Monomial::from_sparse(pairs, 0), c)
}

/// `op Z` with `Z` built in full on a ring large enough for every term, then restricted.
fn residual_oracle(op: impl Fn(TruncationSpec) -> DiffOperator, reach: usize, loss: u32, kmax: usize, dmax: u32) -> Series {
    let zspec = TruncationSpec::z_window(kmax + reach, dmax + loss);
    let wide = zspec.with_window(zspec.lmin - 2, zspec.lmax + 2);
    let z = closed_form_z(zspec).unwrap().retruncate(wide);
    restrict(&op(wide).apply(&z).unwrap(), kmax, dmax)
}

#[test]
fn apply_elementary_examples() {
    let s = spec(2, 4);
    let d0 = DiffOperator::partial(s, 0).unwrap();
    assert_eq!(d0.apply(&t(s, &[(0, 2)], q(1))).unwrap(), t(s, &[(0, 1)], q(2)));
    let op = DiffOperator::derivative(s, &[(0, 1)], t(s, &[(1, 1)], q(1))).unwrap();
    assert_eq!(op.apply(&t(s, &[(0, 1)], q(1))).unwrap(), t(s, &[(1, 1)], q(1)));
    let l0 = virasoro(0, Family::L, s).unwrap();
    assert_eq!(l0.apply(&Series::one(s)).unwrap(), Series::one(s));
    let other = spec(3, 4);
    assert!(d0.apply(&Series::one(other)).is_err());
}

#[test]
fn operator_shapes() {
    let s = spec(4, 4);
    let l2 = virasoro(2, Family::L, s).unwrap();
    assert_eq!(l2.coeff(&[(1, 1)]), Series::monomial(s, Monomial::lambda(1), q(6)));
    assert_eq!(l2.coeff(&[(2, 1)]), t(s, &[(0, 1)], q(6)));
    assert_eq!(l2.coeff(&[(3, 1)]), &t(s, &[(1, 1)], q(24)) - &Series::constant(s, q(24)));
    let lt2 = virasoro(2, Family::LTilde, s).unwrap();
    assert_eq!(lt2.coeff(&[(1, 1)]), Series::monomial(s, Monomial::lambda(1), q(4)));
    assert_eq!(lt2.coeff(&[(0, 2)]), Series::monomial(s, Monomial::lambda(2), q(1)));
    for m in -1..=1 {
        assert_eq!(virasoro(m, Family::L, s).unwrap(), virasoro(m, Family::LTilde, s).unwrap());
    }
    assert!(virasoro(-2, Family::L, s).is_err());
    assert_eq!(l2.order(), 1);
    assert_eq!(lt2.order(), 2);
    assert_eq!(lt2.degree_loss(), 2);
}

#[test]
fn virasoro_annihilates_z() {
    let r = virasoro_report(5, 5, 5).unwrap();
    assert!(r.all_ok(), "{r}");
    assert_eq!(r.len(), 14);
}

#[test]
fn restricted_residuals_agree_with_full_oracle() {
    let (k, d) = (3, 4);
    for m in [-1, 0, 2, 3] {
        let reach = (m + 1).max(1) as usize;
        let probe = |s: TruncationSpec| {
            let mut op = virasoro(m, Family::L, s).unwrap();
            op.add_term(Monomial::var(0), Series::one(s));
            op.add_term(Monomial::var(1), Series::one(s));
            op
        };
        let fast = residual_on_z(|s| Ok(probe(s)), reach, k, d).unwrap();
        let slow = residual_oracle(probe, reach, 1, k, d);
        assert!(!slow.is_zero());
        assert_eq!(fast.retruncate(slow.spec()), slow, "m = {m}");
    }
    let poly = |s: TruncationSpec| polymer_operator(s);
    let fast = residual_on_z(|s| Ok(poly(s)), 0, k, d).unwrap();
    assert_eq!(fast.retruncate(residual_oracle(poly, 0, k as u32, k, d).spec()), residual_oracle(poly, 0, k as u32, k, d));
}

#[test]
fn lowest_order_of_l_minus_one() {
    let s = TruncationSpec::z_window(3, 4).with_window(-3, 3);
    let z = closed_form_z(TruncationSpec::z_window(3, 4)).unwrap().retruncate(s);
    let out = restrict(&virasoro(-1, Family::L, s).unwrap().apply(&z).unwrap(), 3, 3);
    assert!(out.is_zero(), "{out}");
    let no_shift = restrict(&DiffOperator::partial(s, 0).unwrap().apply(&z).unwrap(), 3, 1);
    assert_eq!(no_shift.coeff(&Monomial::from_sparse(&[(0, 1)], -1)), q(1));
}

#[test]
fn virasoro_commutation_on_the_monomial_basis() {
    let r = commutator_report(Family::L, 3, 4, 4).unwrap();
    assert!(r.all_ok(), "{r}");
    assert_eq!(r.len(), 10);
    let s = commutator_spec(4, 4);
    for b in monomial_basis(4, 4) {
        assert!(commutator_defect(1, -1, Family::L, &b, s).unwrap().is_zero());
    }
}

#[test]
fn tilde_family_closes_but_does_not_commute() {
    let r = commutator_report(Family::LTilde, 3, 3, 3).unwrap();
    assert!(r.all_ok(), "{r}");
    let s = commutator_spec(3, 3);
    let a = virasoro(2, Family::LTilde, s).unwrap();
    let b = virasoro(3, Family::LTilde, s).unwrap();
    let nonzero = monomial_basis(3, 3)
        .into_iter()
        .filter(|m| !commutator_apply(&a, &b, &Series::monomial(s, m.clone(), q(1))).unwrap().is_zero())
        .count();
    assert!(nonzero > 0);
    let lhs = a.commutator(&b).unwrap();
    let killed = residual_on_z(
        |w| virasoro(2, Family::LTilde, w)?.commutator(&virasoro(3, Family::LTilde, w)?),
        6,
        3,
        3,
    )
    .unwrap();
    assert!(killed.is_zero(), "{killed}");
    assert!(!lhs.is_zero());
}

#[test]
fn operator_commutator_matches_sequential_application() {
    let s = commutator_spec(3, 3);
    let a = virasoro(-1, Family::L, s).unwrap();
    let b = virasoro(2, Family::LTilde, s).unwrap();
    let c = a.commutator(&b).unwrap();
    for m in monomial_basis(3, 3) {
        let f = Series::monomial(s, m, q(1));
        assert_eq!(c.apply(&f).unwrap(), commutator_apply(&a, &b, &f).unwrap());
    }
}

#[test]
fn flow_and_polymer() {
    let r = flow_polymer_check(6, 6, 6).unwrap();
    assert!(r.all_ok(), "{r}");
    assert!(flow_polymer_check(3, 4, 4).is_err());
    let zero = residual_on_z(|s| flow_operator(0, s), 0, 4, 6).unwrap();
    assert!(zero.is_zero());
    let s = spec(2, 4);
    assert!(flow_operator(0, s).unwrap().apply(&t(s, &[(0, 3)], q(1))).unwrap().is_zero());
}

#[test]
fn operator_solution_reproduces_z() {
    for (k, d) in [(1, 6), (3, 5), (5, 4)] {
        let z = closed_form_z(TruncationSpec::z_window(k, d)).unwrap();
        assert_eq!(operator_solution(k, d).unwrap().retruncate(z.spec()), z);
    }
}

#[test]
fn join_equations() {
    for ns in [vec![1, 1], vec![2, 1], vec![3], vec![1, 1, 1], vec![2, 2], vec![1, 2, 3]] {
        assert!(join_check(&ns, 6, 5).unwrap().is_zero(), "{ns:?}");
    }
    let s = spec(4, 4);
    let j = join_operator(&[1, 1], s).unwrap();
    assert_eq!(j.coeff(&[(0, 2)]), Series::monomial(s, Monomial::lambda(2), q(1)));
    assert_eq!(j.coeff(&[(1, 1)]), Series::monomial(s, Monomial::lambda(1), q(-2)));
    assert_eq!(join_operator(&[2, 1], s).unwrap().coeff(&[(2, 1)]), Series::monomial(s, Monomial::lambda(1), q(-3)));
    assert!(join_operator(&[3, 3], s).is_err());
    assert!(join_operator(&[0, 1], s).is_err());
}

#[test]
fn puncture_and_dilaton() {
    let r = puncture_dilaton_report(5, 5).unwrap();
    assert!(r.all_ok(), "{r}");
}

#[test]
fn dilaton_consequences_hold() {
    let f = free_energy_full(5, 7).unwrap();
    let r = dilaton_consequences(&f);
    assert!(r.all_ok(), "{r}");
    assert!(r.len() > 50);
    assert_eq!(correlator(&CorrelatorKey::new(vec![1, 1, 1], 1), &f).unwrap(), q(1));
    assert_eq!(correlator(&CorrelatorKey::new(vec![1], 1), &f).unwrap(), frac(1, 2));
    assert_eq!(correlator(&CorrelatorKey::new(vec![0, 0, 1], 0), &f).unwrap(), q(1));
    assert_eq!(correlator(&CorrelatorKey::new(vec![0, 0], 0), &f).unwrap(), q(1));
}

#[test]
fn free_energy_is_independent_of_i0_beyond_genus_zero() {
    let r = l_minus1_in_i_report(5, 5, 2).unwrap();
    assert!(r.all_ok(), "{r}");
    assert_eq!(r.len(), 4);
}

#[test]
fn weyl_elementary_products() {
    let xd = WeylElement::term(q(1), 1, 1);
    let mut expected = WeylElement::term(q(1), 2, 2);
    expected.add_term(q(1), 1, 1);
    assert_eq!(weyl_product(&xd, &xd), expected);
    let e = WeylElement::term(frac(3, 2), 2, 3);
    assert_eq!(weyl_product(&e, &WeylElement::one()), e);
    assert_eq!(weyl_product(&WeylElement::one(), &e), e);
    let d = WeylElement::term(q(1), 0, 1);
    let x = WeylElement::term(q(1), 1, 0);
    assert_eq!(d.commutator(&x), WeylElement::one());
}

#[test]
fn weyl_d_x_commutators() {
    for m1 in 0..6u32 {
        for m2 in 0..6u32 {
            let lhs = WeylElement::d_then_x(1, m1).commutator(&WeylElement::d_then_x(1, m2));
            let rhs = if m1 + m2 == 0 {
                WeylElement::zero()
            } else {
                WeylElement::d_then_x(1, m1 + m2 - 1).scale(&q(m2 as i64 - m1 as i64))
            };
            assert_eq!(lhs, rhs, "m1 = {m1}, m2 = {m2}");
        }
    }
}

#[test]
fn weyl_anti_normal_form_round_trips() {
    for m in 0..5u32 {
        for n in 0..5u32 {
            let e = WeylElement::term(q(1), m, n);
            let mut back = WeylElement::zero();
            for ((dn, xm), c) in e.to_anti_normal() {
                back = back.add(&WeylElement::d_then_x(dn, xm).scale(&c));
            }
            assert_eq!(back, e);
        }
    }
    let mut x_d = std::collections::BTreeMap::new();
    x_d.insert((1, 1), q(1));
    x_d.insert((0, 0), q(-1));
    assert_eq!(WeylElement::term(q(1), 1, 1).to_anti_normal(), x_d);
}

#[test]
fn d_polynomials() {
    let d = dn_polynomials(12).unwrap();
    assert_eq!(d[0], JPoly::one());
    assert_eq!(d[2].coeff(&[(1, 1)]), q(1));
    assert_eq!(d[2].coeff(&[(0, 2)]), q(1));
    assert_eq!(d[2].terms().count(), 2);
    assert_eq!(d[4].coeff(&[(1, 2)]), q(3));
    assert_eq!(JPoly::lambda_power(&[0, 2]), -4);
    assert!(dn_polynomials(13).is_err());
    for (n, p) in d.iter().enumerate().take(9) {
        let total: Rational = p.terms().map(|(_, c)| c.clone()).sum();
        assert_eq!(total, q(set_partitions(n).len() as i64), "Bell number at {n}");
        assert_eq!(*p, dn_closed(n));
    }
    assert_eq!(d[3].coeff(&[(0, 1), (1, 1)]), q(3));
    assert_eq!(d[3].coeff(&[(2, 1)]), q(1));
    assert_eq!(d[3].coeff(&[(0, 3)]), q(1));
}

fn arb_series(kmax: usize) -> impl Strategy<Value = Series> {
    let s = spec(kmax, 8);
    proptest::collection::vec((proptest::collection::vec(0u16..2, kmax + 1), 0i32..=2, -5i64..=5, 1i64..=3), 0..5)
        .prop_map(move |terms| Series::from_terms(s, terms.into_iter().map(|(e, l, n, d)| (Monomial::from_dense(&e, l), frac(n, d)))))
}

fn arb_operator(kmax: usize) -> impl Strategy<Value = DiffOperator> {
    let s = spec(kmax, 8);
    proptest::collection::vec(
        (proptest::collection::vec(0u16..2, kmax + 1), proptest::collection::vec(0u16..2, kmax + 1), 0i32..=1, -3i64..=3),
        0..4,
    )
    .prop_map(move |terms| {
        let mut op = DiffOperator::zero(s);
        for (alpha, cm, l, n) in terms {
            op.add_term(Monomial::from_dense(&alpha, 0), Series::monomial(s, Monomial::from_dense(&cm, l), q(n)));
        }
        op
    })
}

fn arb_weyl() -> impl Strategy<Value = WeylElement> {
    proptest::collection::vec((0u32..4, 0u32..4, -4i64..=4), 0..4).prop_map(|terms| {
        let mut w = WeylElement::zero();
        for (m, n, c) in terms {
            w.add_term(q(c), m, n);
        }
        w
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn application_is_linear(op in arb_operator(2), a in arb_series(2), b in arb_series(2), c in -3i64..=3) {
        let lhs = op.apply(&(&a + &b.scale(&q(c)))).unwrap();
        let rhs = &op.apply(&a).unwrap() + &op.apply(&b).unwrap().scale(&q(c));
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn composition_is_sequential_application(a in arb_operator(2), b in arb_operator(2), f in arb_series(2)) {
        let lhs = a.compose(&b).unwrap().apply(&f).unwrap();
        let rhs = a.apply(&b.apply(&f).unwrap()).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn weyl_product_is_composition_of_actions(a in arb_weyl(), b in arb_weyl(), p in proptest::collection::vec(-3i64..=3, 0..6)) {
        let p: Vec<Rational> = p.into_iter().map(q).collect();
        prop_assert_eq!(weyl_product(&a, &b).apply(&p), a.apply(&b.apply(&p)));
    }

    #[test]
    fn weyl_product_is_associative(a in arb_weyl(), b in arb_weyl(), c in arb_weyl()) {
        prop_assert_eq!(weyl_product(&weyl_product(&a, &b), &c), weyl_product(&a, &weyl_product(&b, &c)));
    }

    #[test]
    fn virasoro_residual_vanishes_on_random_scales(m in -1i32..=4, k in 1usize..=4, d in 1u32..=4, tilde in any::<bool>()) {
        let family = if tilde { Family::LTilde } else { Family::L };
        prop_assert!(virasoro_residual(m, family, k, d).unwrap().is_zero());
    }
}

#[test]
fn factorial_weights_in_flow_operator() {
    let s = spec(3, 6);
    let f = flow_operator(2, s).unwrap();
    assert_eq!(f.coeff(&[(0, 3)]), Series::monomial(s, Monomial::lambda(2), -Rational::one() / factorial_q(3)));
    assert_eq!(f.coeff(&[(2, 1)]), Series::one(s));
    let p = polymer_operator(s);
    assert_eq!(p.coeff(&[]), t(s, &[(0, 1)], q(1)));
    assert_eq!(p.coeff(&[(0, 1)]), &t(s, &[(1, 1)], q(1)).shift_l(1) - &Series::monomial(s, Monomial::lambda(1), q(1)));
    assert!(p.coeff(&[(0, 2)]).coeff(&Monomial::from_sparse(&[(2, 1)], 2)) == frac(1, 2));
}
