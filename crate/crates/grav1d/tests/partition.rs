use grav1d::combinat::{double_factorial, frac, multinomial, q};
use grav1d::partition::*;
use grav1d::{Monomial, Rational, Series, TruncationSpec};
use num_traits::Zero;
use proptest::prelude::*;

fn desk_f() -> Series {
    free_energy_full(7, 6).unwrap()
}

fn key(powers: &[(usize, usize)], g: u32) -> CorrelatorKey {
    CorrelatorKey::from_powers(powers, g)
}

/// The printed correlator list, as `(index, multiplicity)` powers, genus and value.
pub fn printed_correlators() -> Vec<(Vec<(usize, usize)>, u32, Rational)> {
    vec![
        (vec![(0, 2)], 0, frac(1, 1)),
        (vec![(1, 1)], 1, frac(1, 2)),
        (vec![(0, 2), (1, 1)], 0, frac(1, 1)),
        (vec![(0, 1), (2, 1)], 1, frac(1, 2)),
        (vec![(1, 2)], 1, frac(1, 2)),
        (vec![(3, 1)], 2, frac(1, 8)),
        (vec![(0, 2), (1, 2)], 0, frac(2, 1)),
        (vec![(0, 3), (2, 1)], 0, frac(1, 1)),
        (vec![(1, 3)], 1, frac(1, 1)),
        (vec![(0, 2), (3, 1)], 1, frac(1, 2)),
        (vec![(0, 1), (1, 1), (2, 1)], 1, frac(1, 1)),
        (vec![(2, 2)], 2, frac(5, 12)),
        (vec![(0, 1), (4, 1)], 2, frac(1, 8)),
        (vec![(1, 1), (3, 1)], 2, frac(1, 4)),
        (vec![(5, 1)], 3, frac(1, 48)),
        (vec![(1, 3), (0, 2)], 0, frac(6, 1)),
        (vec![(1, 1), (2, 1), (0, 3)], 0, frac(3, 1)),
        (vec![(3, 1), (0, 4)], 0, frac(1, 1)),
        (vec![(1, 4)], 1, frac(3, 1)),
        (vec![(0, 2), (1, 1), (3, 1)], 1, frac(3, 2)),
        (vec![(0, 1), (1, 2), (2, 1)], 1, frac(3, 1)),
        (vec![(0, 3), (4, 1)], 1, frac(1, 2)),
        (vec![(0, 2), (2, 2)], 1, frac(2, 1)),
        (vec![(2, 2), (1, 1)], 2, frac(5, 4)),
        (vec![(4, 1), (0, 1), (1, 1)], 2, frac(3, 8)),
        (vec![(3, 1), (1, 2)], 2, frac(3, 4)),
        (vec![(5, 1), (0, 2)], 2, frac(1, 8)),
        (vec![(0, 1), (2, 1), (3, 1)], 2, frac(2, 3)),
        (vec![(5, 1), (1, 1)], 3, frac(1, 16)),
        (vec![(3, 2)], 3, frac(1, 6)),
        (vec![(0, 1), (6, 1)], 3, frac(1, 48)),
        (vec![(4, 1), (2, 1)], 3, frac(7, 48)),
        (vec![(7, 1)], 4, frac(1, 384)),
    ]
}

#[test]
fn z_first_terms() {
    let z = closed_form_z(TruncationSpec::z_window(3, 2)).unwrap();
    assert_eq!(z.coeff(&Monomial::one()), q(1));
    assert_eq!(z.coeff(&Monomial::from_sparse(&[(1, 1)], 0)), frac(1, 2));
    assert_eq!(z.coeff(&Monomial::from_sparse(&[(3, 1)], 1)), frac(1, 8));
    assert_eq!(z.coeff(&Monomial::from_sparse(&[(0, 2)], -1)), frac(1, 2));
}

#[test]
fn z_window_overflow_is_reported() {
    let small = TruncationSpec::new(3, 2, 0, 0).unwrap();
    assert!(matches!(closed_form_z(small), Err(grav1d::Error::WindowOverflow(_))));
}

#[test]
fn free_energy_first_terms() {
    let f = free_energy_full(7, 2).unwrap();
    assert_eq!(f.coeff(&Monomial::from_sparse(&[(2, 2)], 1)), frac(5, 24));
    assert_eq!(f.coeff(&Monomial::from_sparse(&[(7, 1)], 3)), frac(1, 384));
    assert_eq!(f.coeff(&Monomial::from_sparse(&[(0, 2)], -1)), frac(1, 2));
}

#[test]
fn printed_correlator_list() {
    let f = desk_f();
    for (powers, g, v) in printed_correlators() {
        let k = key(&powers, g);
        assert!(k.admissible(), "{k}");
        assert_eq!(correlator(&k, &f).unwrap(), v, "{k}");
    }
}

#[test]
fn correlator_selection_and_truncation() {
    let f = free_energy_full(3, 3).unwrap();
    assert_eq!(correlator(&key(&[(0, 1), (1, 1)], 0), &f).unwrap(), Rational::zero());
    let far = key(&[(1, 6)], 1);
    assert!(matches!(correlator(&far, &f), Err(grav1d::Error::InsufficientTruncation(_))));
    assert_eq!(key(&[(0, 2), (1, 1)], 0).to_string(), "<tau_0^2 tau_1>_0");
}

#[test]
fn correlator_table_is_sorted_and_admissible() {
    let f = free_energy_full(4, 3).unwrap();
    let rows = correlator_table(&f, 2);
    assert!(!rows.is_empty());
    for w in rows.windows(2) {
        let a = (w[0].0.genus, w[0].0.indices.len(), &w[0].0.indices);
        let b = (w[1].0.genus, w[1].0.indices.len(), &w[1].0.indices);
        assert!(a < b);
    }
    for (k, v) in &rows {
        assert!(k.admissible());
        assert_eq!(&correlator(k, &f).unwrap(), v);
    }
}

#[test]
fn grading_rule_holds_termwise() {
    let spec = TruncationSpec::z_window(5, 5);
    let z = closed_form_z(spec).unwrap();
    let f = free_energy(&z).unwrap();
    for s in [&z, &f] {
        for (m, _) in s.terms() {
            assert_eq!(m.index_sum() as i64, 2 * m.l() as i64 + m.deg() as i64, "{m}");
        }
    }
}

#[test]
fn t0_line_and_genus_zero_vanishing() {
    let spec = TruncationSpec::z_window(4, 8);
    let f0line = free_energy(&closed_form_z_on(spec, &[0]).unwrap()).unwrap();
    assert_eq!(f0line, Series::monomial(spec, Monomial::from_sparse(&[(0, 2)], -1), frac(1, 2)));
    let f = free_energy_full(4, 5).unwrap();
    assert!(f.terms().all(|(m, _)| m.l() != -1 || m.exp(0) > 0));
}

#[test]
fn dilaton_consistency() {
    let f = desk_f();
    let spec = f.spec();
    for (m, _) in f.terms() {
        let g = m.l() + 1;
        let n = m.deg() as i64;
        if (g == 1 && n == 0) || m.deg() + 1 > spec.dmax {
            continue;
        }
        let base = CorrelatorKey::new(m.indices(), g as u32);
        let mut idx = m.indices();
        idx.push(1);
        let with = CorrelatorKey::new(idx, g as u32);
        let expected = correlator(&base, &f).unwrap() * q(g as i64 - 1 + n);
        assert_eq!(correlator(&with, &f).unwrap(), expected, "{with}");
    }
    for m in 1..=6usize {
        let v = correlator(&key(&[(1, m)], 1), &f).unwrap();
        assert_eq!(v, Rational::from_integer(grav1d::combinat::factorial(m as u64 - 1)) * frac(1, 2));
    }
}

#[test]
fn join_identity_in_genus_zero() {
    let spec = TruncationSpec::z_window(6, 6);
    let f0 = free_energy(&closed_form_z(spec).unwrap()).unwrap().slice_l(-1).shift_l(1);
    let tuples: [&[u64]; 5] = [&[1, 1], &[2, 1], &[1, 1, 1], &[2, 2], &[3, 1, 2]];
    for t in tuples {
        let mut lhs = Series::one(spec);
        for &n in t {
            lhs = &lhs * &f0.derive(n as usize - 1).unwrap();
        }
        let total: u64 = t.iter().sum();
        let rhs = f0.derive(total as usize - 1).unwrap().scale(&Rational::from_integer(multinomial(t)));
        let top = spec.dmax - 1;
        assert_eq!(lhs.up_to_degree(top), rhs.up_to_degree(top), "{t:?}");
    }
}

#[test]
fn z_t2_printed_sequence() {
    let printed = [
        frac(1, 1),
        frac(5, 24),
        frac(385, 1152),
        frac(85085, 82944),
        frac(37182145, 7962624),
        frac(5391411025, 191102976),
        frac(5849680962125, 27518828544),
        frac(1267709431363375, 660451885056),
    ];
    let table = restricted_form(RestrictedForm::Zt2, 8).unwrap();
    assert!(table.residual().is_zero());
    for (n, v) in printed.iter().enumerate() {
        let m = Monomial::from_sparse(&[(2, 2 * n as u32)], n as i32);
        assert_eq!(&table.formula.coeff(&m), v);
    }
    let last: Rational = "2562040760785380875/126806761930752".parse().unwrap();
    assert_eq!(table.formula.coeff(&Monomial::from_sparse(&[(2, 16)], 8)), last);
}

#[test]
fn f_t2_printed_sequence() {
    let printed = [
        frac(5, 24),
        frac(5, 16),
        frac(1105, 1152),
        frac(565, 128),
        frac(82825, 3072),
        frac(19675, 96),
        frac(1282031525, 688128),
        frac(80727925, 4096),
    ];
    let spec = TruncationSpec::z_window(2, 16);
    let f = free_energy(&closed_form_z_on(spec, &[2]).unwrap()).unwrap();
    for (i, v) in printed.iter().enumerate() {
        let g = i as u32 + 2;
        let m = Monomial::from_sparse(&[(2, 2 * g - 2)], g as i32 - 1);
        assert_eq!(&f.coeff(&m), v, "genus {g}");
    }
    let b = b_constants(9);
    for (i, v) in printed.iter().enumerate() {
        assert_eq!(&b[i + 2], v);
    }
}

#[test]
fn a_and_b_constants() {
    let a = a_constants(3);
    assert_eq!(a[1], frac(1, 2));
    assert_eq!(a[2], frac(5, 8));
    assert_eq!(a[3], frac(15, 8));
    let b = b_constants(3);
    assert_eq!(b[2], frac(5, 24));
    assert_eq!(b[3], frac(5, 16));
}

#[test]
fn restricted_forms_match_closed_form() {
    let forms = [
        (RestrictedForm::Zt0, 8),
        (RestrictedForm::Zt0t1, 7),
        (RestrictedForm::Zt2, 6),
        (RestrictedForm::Zt0t2, 3),
        (RestrictedForm::ZOdd(1), 8),
        (RestrictedForm::ZOdd(2), 6),
        (RestrictedForm::ZOdd(3), 5),
        (RestrictedForm::ZEven(1), 5),
        (RestrictedForm::ZEven(2), 4),
    ];
    for (form, order) in forms {
        let t = restricted_form(form, order).unwrap();
        assert!(t.residual().is_zero(), "{form:?}: {}", t.residual());
        assert!(!t.formula.is_zero());
    }
    assert!(restricted_form(RestrictedForm::ZOdd(0), 3).is_err());
    assert!(restricted_form(RestrictedForm::Zt2, 41).is_err());
}

#[test]
fn f_t0t2_genus_two_derivative() {
    let t = restricted_form(RestrictedForm::Zt0t2, 2).unwrap();
    let f2 = t.formula.slice_l(1).derive(0).unwrap();
    let spec = f2.spec();
    let base = &Series::one(spec) - &Series::monomial(spec, Monomial::from_sparse(&[(0, 1), (2, 1)], 0), q(2));
    let expected = base.pow_q(&frac(-5, 2)).unwrap().mul_monomial(&Monomial::from_sparse(&[(2, 3)], 1), &frac(5, 8));
    let top = spec.dmax - 1;
    assert_eq!(f2.up_to_degree(top), expected.up_to_degree(top));
    let f1 = t.formula.slice_l(0).derive(0).unwrap();
    let expected1 = base
        .invert_unit()
        .unwrap()
        .mul_monomial(&Monomial::from_sparse(&[(2, 1)], 0), &frac(1, 2));
    assert_eq!(f1.up_to_degree(top), expected1.up_to_degree(top));
}

#[test]
fn one_minus_t1_residual_vanishes() {
    let f = free_energy_full(5, 5).unwrap().retain(|m, _| m.l() <= 1);
    let r = one_minus_t1_form(&f).unwrap().retain(|m, _| m.l() <= 1);
    assert!(r.is_zero(), "{r}");
    let rebuilt = one_minus_t1_rebuild(&f).unwrap();
    for n in 1..=5u32 {
        assert_eq!(rebuilt.coeff(&Monomial::from_sparse(&[(1, n)], 0)), frac(1, 2 * n as i64));
    }
    assert!(rebuilt.coeff(&Monomial::one()).is_zero());
}

#[test]
fn edge_truncation_is_compatible_with_log() {
    let emax = 4;
    let z = closed_form_z_edges(6, emax);
    let f = truncate_edges(&free_energy(&z).unwrap(), emax);
    let full = free_energy_full(6, 8).unwrap();
    for (m, c) in f.terms() {
        assert_eq!(full.coeff(m), *c, "{m}");
    }
    for (m, c) in full.terms() {
        if edge_count(m) <= emax && m.deg() <= 8 {
            assert_eq!(f.coeff(m), *c, "{m}");
        }
    }
}

fn wick_count(valences: &[u64]) -> Rational {
    let total: u64 = valences.iter().sum();
    if total % 2 == 1 {
        return Rational::zero();
    }
    Rational::from_integer(double_factorial(total as i64 - 1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn z_coefficient_is_pairing_count_over_symmetries(e0 in 0u16..4, e1 in 0u16..3, e2 in 0u16..3, e3 in 0u16..3) {
        let exps = [e0, e1, e2, e3];
        let mut valences = Vec::new();
        let mut sym = Rational::from_integer(1.into());
        for (a, &m) in exps.iter().enumerate() {
            for _ in 0..m {
                valences.push(a as u64 + 1);
            }
            sym *= Rational::from_integer(grav1d::combinat::factorial(a as u64 + 1).pow(m as u32))
                * Rational::from_integer(grav1d::combinat::factorial(m as u64));
        }
        let expected = wick_count(&valences) / sym;
        match z_coefficient(&exps) {
            Some((l, c)) => {
                prop_assert_eq!(c, expected);
                let n = valences.iter().sum::<u64>() as i32 / 2;
                prop_assert_eq!(l, n - valences.len() as i32);
            }
            None => prop_assert!(expected.is_zero()),
        }
    }

    #[test]
    fn correlator_keys_sort_canonically(mut idx in proptest::collection::vec(0usize..6, 0..6), g in 0u32..4) {
        let k = CorrelatorKey::new(idx.clone(), g);
        idx.sort();
        prop_assert_eq!(&k.indices, &idx);
        let sum: usize = idx.iter().sum();
        prop_assert_eq!(k.admissible(), sum as i64 == 2 * g as i64 - 2 + idx.len() as i64);
    }
}
