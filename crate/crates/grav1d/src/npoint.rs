//! Loop operators and the two families of n-point functions.
//!
//! `W_n(z_1, …, z_n)` is expanded in the `z_i^{-1}` and `Ŵ_n(w_1, …, w_n)` in the `w_i`.
//! Both are stored as [`OuterSeries`] whose coefficients are series in the couplings and
//! `λ²`; the λ-grade `g` part is the genus-`g` function. Besides evaluation by loop
//! operators the module provides the closed forms on the `t_0`-line, the two-point and
//! genus-zero `l`-point formulas, the `l`-point recursions, and the marked-graph
//! expansions of `W_{0,n}` and `W_{1,n}` in `t_0`-derivatives of `F_0`.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{One, Zero};

use crate::combinat::{binomial, double_factorial, factorial, factorial_q, frac, partition_multiplicities, weak_compositions};
use crate::error::{Error, Result};
use crate::icoords::compute_i;
use crate::par;
use crate::partition::{correlator, free_energy_full, CorrelatorKey};
use crate::report::{Check, Report};
use crate::series_core::{Monomial, OuterSeries, Rational, Series, Slot, TruncationSpec};

/// Expansion kind of a slot variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SlotKind {
    /// Expansion in `z^{-1}` with exponents `-order ..= -1`.
    ZMinus,
    /// Expansion in `w` with exponents `0 ..= order`.
    WPlus,
}

/// A slot variable kind together with its truncation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LoopSlot {
    /// Expansion kind.
    pub kind: SlotKind,
    /// Truncation order `M`.
    pub order: i32,
}

impl LoopSlot {
    /// A `z^{-1}` slot of order `M`.
    pub fn z(order: i32) -> Self {
        LoopSlot { kind: SlotKind::ZMinus, order }
    }

    /// A `w` slot of order `M`.
    pub fn w(order: i32) -> Self {
        LoopSlot { kind: SlotKind::WPlus, order }
    }

    /// The stored slot descriptor under the given name.
    pub fn slot(&self, name: &str) -> Slot {
        match self.kind {
            SlotKind::ZMinus => Slot::zminus(name, self.order),
            SlotKind::WPlus => Slot::wplus(name, self.order),
        }
    }

    /// Conventional name of slot `i` (0-based): `z1, z2, …` or `w1, w2, …`.
    pub fn name(&self, i: usize) -> String {
        match self.kind {
            SlotKind::ZMinus => format!("z{}", i + 1),
            SlotKind::WPlus => format!("w{}", i + 1),
        }
    }

    /// Descriptors for `n` slots named by [`LoopSlot::name`].
    pub fn slots(&self, n: usize) -> Vec<Slot> {
        (0..n).map(|i| self.slot(&self.name(i))).collect()
    }

    /// Largest `m` whose derivative `∂/∂t_{m-1}` still lands inside the slot range.
    pub fn max_m(&self) -> usize {
        match self.kind {
            SlotKind::ZMinus => (self.order - 1).max(0) as usize,
            SlotKind::WPlus => self.order.max(0) as usize,
        }
    }

    /// Exponent carrying `∂/∂t_{m-1}`.
    pub fn exponent(&self, m: usize) -> i32 {
        match self.kind {
            SlotKind::ZMinus => -(m as i32) - 1,
            SlotKind::WPlus => m as i32,
        }
    }

    /// Weight of `∂/∂t_{m-1}`: `m!` for `z`, `1` for `w`.
    pub fn weight(&self, m: usize) -> Rational {
        match self.kind {
            SlotKind::ZMinus => factorial_q(m as u64),
            SlotKind::WPlus => Rational::one(),
        }
    }

    /// Exponent of the constant `δ_{n,1}` term: `z^{-1}` or `w^0`.
    pub fn delta_exponent(&self) -> i32 {
        match self.kind {
            SlotKind::ZMinus => -1,
            SlotKind::WPlus => 0,
        }
    }

    fn check(&self, spec: TruncationSpec) -> Result<()> {
        let m = self.max_m();
        if m >= 1 && m - 1 > spec.kmax {
            return Err(Error::InsufficientTruncation(format!(
                "slot order {} needs t_{} but kmax = {}",
                self.order,
                m - 1,
                spec.kmax
            )));
        }
        Ok(())
    }
}

/// Spec used for every n-point object built from a free energy on `spec`.
///
/// The λ-window is widened upwards so that the factors `λ^{2k}` of the formulas never
/// truncate.
pub fn loop_spec(spec: TruncationSpec) -> TruncationSpec {
    spec.with_window(spec.lmin, spec.lmax + spec.dmax as i32 + 8)
}

/// `λ² F` under [`loop_spec`].
pub fn lambda2_f(f: &Series) -> Series {
    f.retruncate(loop_spec(f.spec())).shift_l(1)
}

/// Keeps the terms of every coefficient with t-degree `≤ dmax` and λ-grade `≤ lmax`.
pub fn cut(o: &OuterSeries, dmax: u32, lmax: i32) -> OuterSeries {
    o.map_coeffs(|s| s.retain(|m, _| m.deg() <= dmax && m.l() <= lmax))
}

/// The genus-`g` part, moved to λ-grade 0.
pub fn genus_part(w: &OuterSeries, g: u32) -> OuterSeries {
    w.map_coeffs(|s| s.slice_l(g as i32).shift_l(-(g as i32)))
}

/// `B(z) target = Σ_m m! z^{-m-1} ∂target/∂t_{m-1}` or `B̂(w) target = Σ_m w^m ∂target/∂t_{m-1}`.
pub fn loop_b(slot: &LoopSlot, name: &str, target: &Series) -> Result<OuterSeries> {
    let mut t = OuterSeries::zero(Vec::new(), target.spec());
    t.add_coeff(Vec::new(), target);
    loop_b_outer(slot, name, &t)
}

/// Applies a loop operator coefficientwise, prepending its slot to the existing ones.
pub fn loop_b_outer(slot: &LoopSlot, name: &str, target: &OuterSeries) -> Result<OuterSeries> {
    slot.check(target.spec())?;
    let mut slots = vec![slot.slot(name)];
    slots.extend(target.slots().iter().cloned());
    let jobs: Vec<(usize, &Vec<i32>, &Series)> =
        target.terms().flat_map(|(e, s)| (1..=slot.max_m()).map(move |m| (m, e, s))).collect();
    let images = par::map(&jobs, |(m, e, s)| {
        let mut exps = vec![slot.exponent(*m)];
        exps.extend(e.iter().copied());
        s.derive(m - 1).map(|d| (exps, d.scale(&slot.weight(*m))))
    });
    let mut out = OuterSeries::zero(slots, target.spec());
    for item in images {
        let (e, s) = item?;
        out.add_coeff(e, &s);
    }
    Ok(out)
}

/// `[W_1, …, W_nmax]` (or the `Ŵ` family) by repeated loop operators, `W_n = δ_{n,1} + B W_{n-1}`.
pub fn n_point_tower(f: &Series, slot: LoopSlot, nmax: usize) -> Result<Vec<OuterSeries>> {
    let lf = lambda2_f(f);
    let spec = lf.spec();
    let mut cur = OuterSeries::zero(Vec::new(), spec);
    if !lf.is_zero() {
        cur.add_coeff(Vec::new(), &lf);
    }
    let mut out = Vec::new();
    for n in 1..=nmax {
        let mut next = loop_b_outer(&slot, "new", &cur)?.with_slots(slot.slots(n))?;
        if n == 1 {
            next.add_coeff(vec![slot.delta_exponent()], &Series::one(spec));
        }
        out.push(next.clone());
        cur = next;
    }
    Ok(out)
}

/// `W_n` (or `Ŵ_n`) by repeated loop operators.
pub fn n_point(f: &Series, slot: LoopSlot, n: usize) -> Result<OuterSeries> {
    if n == 0 {
        let lf = lambda2_f(f);
        return Ok(OuterSeries::term(Vec::new(), Vec::new(), lf));
    }
    Ok(n_point_tower(f, slot, n)?.pop().expect("tower is nonempty"))
}

/// `W_n` (or `Ŵ_n`) straight from the definition `δ + λ² Σ ∂^n F ∏ weight · x^{exponent}`.
pub fn n_point_direct(f: &Series, slot: LoopSlot, n: usize) -> Result<OuterSeries> {
    let lf = lambda2_f(f);
    let spec = lf.spec();
    slot.check(spec)?;
    let mut out = OuterSeries::zero(slot.slots(n), spec);
    let ms: Vec<usize> = (1..=slot.max_m()).collect();
    let mut tuples: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..n {
        tuples = tuples.into_iter().flat_map(|t| ms.iter().map(move |&m| [t.clone(), vec![m]].concat())).collect();
    }
    let terms = par::map(&tuples, |t| -> Result<(Vec<i32>, Series)> {
        let mut s = lf.clone();
        let mut w = Rational::one();
        for &m in t {
            s = s.derive(m - 1)?;
            w *= slot.weight(m);
        }
        Ok((t.iter().map(|&m| slot.exponent(m)).collect(), s.scale(&w)))
    });
    for item in terms {
        let (e, s) = item?;
        out.add_coeff(e, &s);
    }
    if n == 1 {
        out.add_coeff(vec![slot.delta_exponent()], &Series::one(spec));
    }
    Ok(out)
}

/// Laplace transform `w^m ↦ m! z^{-m-1}` in every slot; all slots must be `w`-slots.
pub fn laplace(hat: &OuterSeries) -> Result<OuterSeries> {
    let mut slots = Vec::new();
    for (i, s) in hat.slots().iter().enumerate() {
        if s.emin < 0 {
            return Err(Error::SlotMismatch(format!("slot {} is not a w-slot", s.name)));
        }
        slots.push(Slot::zminus(&format!("z{}", i + 1), s.emax + 1));
    }
    let mut out = OuterSeries::zero(slots, hat.spec());
    for (e, s) in hat.terms() {
        let w: Rational = e.iter().map(|&m| factorial_q(m as u64)).product();
        out.add_coeff(e.iter().map(|&m| -m - 1).collect(), &s.scale(&w));
    }
    Ok(out)
}

/// Inverse of [`laplace`]; all slots must be `z^{-1}`-slots.
pub fn laplace_inverse(w: &OuterSeries) -> Result<OuterSeries> {
    let mut slots = Vec::new();
    for (i, s) in w.slots().iter().enumerate() {
        if s.emax >= 0 {
            return Err(Error::SlotMismatch(format!("slot {} is not a z-slot", s.name)));
        }
        slots.push(Slot::wplus(&format!("w{}", i + 1), -s.emin - 1));
    }
    let mut out = OuterSeries::zero(slots, w.spec());
    for (e, s) in w.terms() {
        let c: Rational = e.iter().map(|&x| Rational::one() / factorial_q((-x - 1) as u64)).product();
        out.add_coeff(e.iter().map(|&x| -x - 1).collect(), &s.scale(&c));
    }
    Ok(out)
}

/// The Bessel triangle `T(n, k) = n! / ((n-2k)! k! 2^k)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BesselTriangle {
    rows: Vec<Vec<BigInt>>,
}

impl BesselTriangle {
    /// Rows `0 ..= nmax`.
    pub fn new(nmax: usize) -> Self {
        let rows = (0..=nmax)
            .map(|n| {
                (0..=n / 2)
                    .map(|k| {
                        factorial(n as u64)
                            / (factorial((n - 2 * k) as u64) * factorial(k as u64) * BigInt::from(2).pow(k as u32))
                    })
                    .collect()
            })
            .collect();
        BesselTriangle { rows }
    }

    /// Largest stored row.
    pub fn nmax(&self) -> usize {
        self.rows.len() - 1
    }

    /// `T(n, k)`, zero for `2k > n` or rows beyond the table.
    pub fn get(&self, n: usize, k: usize) -> BigInt {
        self.rows.get(n).and_then(|r| r.get(k)).cloned().unwrap_or_else(BigInt::zero)
    }

    /// Row `n` as a vector over `k`.
    pub fn row(&self, n: usize) -> &[BigInt] {
        &self.rows[n]
    }
}

/// `∂F/∂t_n` on the `t_0`-line: `(1/((n+1)! λ²)) Σ_k T(n+1, k) t_0^{n+1-2k} λ^{2k}`.
pub fn t0_line_dfdtn(n: usize, spec: TruncationSpec) -> Series {
    let tri = BesselTriangle::new(n + 1);
    let mut out = Series::zero(spec);
    let inv = Rational::one() / factorial_q(n as u64 + 1);
    for (k, c) in tri.row(n + 1).iter().enumerate() {
        let e = (n + 1 - 2 * k) as u32;
        let pairs: Vec<(usize, u32)> = if e > 0 { vec![(0, e)] } else { Vec::new() };
        out.add_term(Monomial::from_sparse(&pairs, k as i32 - 1), Rational::from_integer(c.clone()) * &inv);
    }
    out
}

/// `W_1` on the `t_0`-line: `Σ_g (2g-1)!! λ^{2g} (z - t_0)^{-2g-1}` up to `z^{-order}`.
pub fn t0_line_one_point(order: i32, spec: TruncationSpec) -> OuterSeries {
    let mut out = OuterSeries::zero(vec![Slot::zminus("z1", order)], spec);
    for g in 0.. {
        let p = 2 * g + 1;
        if p > order {
            break;
        }
        let df = Rational::from_integer(double_factorial(2 * g as i64 - 1));
        for m in 0..=(order - p).min(spec.dmax as i32) {
            let c = Rational::from_integer(binomial((m + p - 1) as u64, (p - 1) as u64)) * &df;
            let pairs: Vec<(usize, u32)> = if m > 0 { vec![(0, m as u32)] } else { Vec::new() };
            out.add_coeff(vec![-m - p], &Series::monomial(spec, Monomial::from_sparse(&pairs, g), c));
        }
    }
    out
}

/// `W_{0,1} = 1/(z - I_0) = Σ_n I_0^n z^{-n-1}` with `I_0` from the I-coordinates.
pub fn one_point_geometric(spec: TruncationSpec, order: i32) -> Result<OuterSeries> {
    let i0 = compute_i(spec)?.get(0);
    Ok(inverse_power("z1", order, 1, &i0))
}

/// `(v-1)!`-free expansion `(z - x)^{-v} = Σ_m C(m+v-1, v-1) x^m z^{-m-v}` for `x` without constant term.
pub fn inverse_power(name: &str, order: i32, v: u32, x: &Series) -> OuterSeries {
    let spec = x.spec();
    let mut out = OuterSeries::zero(vec![Slot::zminus(name, order)], spec);
    let mut xm = Series::one(spec);
    let mut m = 0i32;
    while m + v as i32 <= order && !xm.is_zero() {
        let c = Rational::from_integer(binomial((m + v as i32 - 1) as u64, (v - 1) as u64));
        out.add_coeff(vec![-m - v as i32], &xm.scale(&c));
        xm = &xm * x;
        m += 1;
    }
    out
}

/// `a_j = λ^{2j} ∂^j F / ∂t_0^j / j!` for `j = 1 ..= jmax`, cut to degree `dcut`; index 0 is zero.
fn t0_jets(f: &Series, jmax: usize, dcut: u32) -> Result<Vec<Series>> {
    let spec = loop_spec(f.spec());
    let base = f.retruncate(spec);
    let mut out = vec![Series::zero(spec)];
    let mut d = base.clone();
    for j in 1..=jmax {
        d = d.derive(0)?;
        let a = d.shift_l(j as i32).scale(&(Rational::one() / factorial_q(j as u64)));
        out.push(a.retain(|m, _| m.deg() <= dcut));
    }
    Ok(out)
}

/// `W_1 = (1/z) Σ_m (Σ j m_j)! / ∏ m_j! ∏ (λ^{2j} ∂^j F / (z^j j!))^{m_j}`.
///
/// Coefficients are exact up to t-degree `dmax - order + 1` and are cut there.
pub fn one_point_partition_sum(f: &Series, order: i32) -> Result<OuterSeries> {
    let nmax = (order - 1).max(0) as usize;
    let dcut = f.spec().dmax.saturating_sub(nmax as u32);
    let a = t0_jets(f, nmax, dcut)?;
    let spec = a[0].spec();
    let mut powers: BTreeMap<(usize, usize), Series> = BTreeMap::new();
    let mut out = OuterSeries::zero(vec![Slot::zminus("z1", order)], spec);
    for n in 0..=nmax {
        let mut coeff = Series::zero(spec);
        for m in partition_multiplicities(n) {
            let mut c = factorial_q(n as u64);
            let mut prod = Series::one(spec);
            for (j, &mj) in m.iter().enumerate().skip(1) {
                if mj == 0 {
                    continue;
                }
                c /= factorial_q(mj as u64);
                let p = powers.entry((j, mj)).or_insert_with(|| a[j].pow(mj as u32).retain(|x, _| x.deg() <= dcut));
                prod = (&prod * &*p).retain(|x, _| x.deg() <= dcut);
            }
            coeff = &coeff + &prod.scale(&c);
        }
        out.add_coeff(vec![-(n as i32) - 1], &coeff);
    }
    Ok(out)
}

/// `Ŵ_1 = exp Σ_{n ≥ 1} w^n λ^{2n} ∂^n F / ∂t_0^n / n!`, exact and cut at degree `dmax - order`.
pub fn one_point_hat_exp(f: &Series, order: i32) -> Result<OuterSeries> {
    let nmax = order.max(0) as usize;
    let dcut = f.spec().dmax.saturating_sub(nmax as u32);
    let a = t0_jets(f, nmax, dcut)?;
    let spec = a[0].spec();
    let slots = vec![Slot::wplus("w1", order)];
    let mut x = OuterSeries::zero(slots.clone(), spec);
    for (n, s) in a.iter().enumerate().skip(1) {
        x.add_coeff(vec![n as i32], s);
    }
    let mut out = OuterSeries::term(slots.clone(), vec![0], Series::one(spec));
    let mut pw = out.clone();
    for k in 1..=nmax {
        pw = cut(&pw.checked_mul(&x)?, dcut, i32::MAX);
        out = out.checked_add(&pw.scale(&(Rational::one() / factorial_q(k as u64))))?;
    }
    Ok(out)
}

/// `Ŵ_1(w_1 + w_2) - Ŵ_1(w_1) Ŵ_1(w_2)` for total `w`-degree `≤ order`.
pub fn two_point_hat_rhs(hat1: &OuterSeries) -> Result<OuterSeries> {
    let order = hat1.slots()[0].emax;
    let slots = vec![Slot::wplus("w1", order), Slot::wplus("w2", order)];
    let mut sum = OuterSeries::zero(slots.clone(), hat1.spec());
    for (e, s) in hat1.terms() {
        let n = e[0];
        for a in 0..=n {
            let c = Rational::from_integer(binomial(n as u64, a as u64));
            sum.add_coeff(vec![a, n - a], &s.scale(&c));
        }
    }
    let h1 = hat1.with_slots(vec![slots[0].clone()])?;
    let h2 = hat1.with_slots(vec![Slot::wplus("w2", order)])?;
    let prod = h1.tensor(&h2)?;
    Ok(sum.checked_sub(&prod)?.filter(|e| e[0] + e[1] <= order))
}

/// `t_0`-derivatives `∂^j F_0 / ∂t_0^j` for `j = 0 ..= jmax` at λ-grade 0, and `(∂²F_0/∂t_0²)^{-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Genus0Jets {
    /// `d[j] = ∂^j F_0 / ∂t_0^j`.
    pub d: Vec<Series>,
    /// `1 / (∂²F_0/∂t_0²)`.
    pub d2_inv: Series,
}

impl Genus0Jets {
    /// Extracts `F_0` from the grade `-1` part of `f`.
    pub fn new(f: &Series, jmax: usize) -> Result<Self> {
        let spec = loop_spec(f.spec());
        let f0 = f.retruncate(spec).slice_l(-1).shift_l(1);
        let mut d = vec![f0];
        for j in 1..=jmax.max(2) {
            let next = d[j - 1].derive(0)?;
            d.push(next);
        }
        let d2_inv = d[2].invert_unit()?;
        Ok(Genus0Jets { d, d2_inv })
    }

    /// `∂^j F_0 / ∂t_0^j`.
    pub fn get(&self, j: usize) -> Result<&Series> {
        self.d.get(j).ok_or_else(|| Error::InsufficientTruncation(format!("t_0-derivative {j} of F_0 not computed")))
    }

    /// Common spec.
    pub fn spec(&self) -> TruncationSpec {
        self.d[0].spec()
    }
}

/// `∂^{l-2}/∂t_0^{l-2} [∏_j (z_j - ∂F_0/∂t_0)^{-2} · ∂²F_0/∂t_0²]`, and `1/(z - ∂F_0/∂t_0)` for `l = 1`.
pub fn l_point_genus0(jets: &Genus0Jets, l: usize, order: i32) -> Result<OuterSeries> {
    if l == 0 {
        return Err(Error::Domain("l-point functions need l >= 1".into()));
    }
    let i0 = jets.get(1)?;
    if l == 1 {
        return Ok(inverse_power("z1", order, 1, i0));
    }
    let mut prod = OuterSeries::term(Vec::new(), Vec::new(), jets.get(2)?.clone());
    for j in 0..l {
        prod = prod.tensor(&inverse_power(&format!("z{}", j + 1), order, 2, i0))?;
    }
    for _ in 0..l - 2 {
        prod = prod.derive_t(0)?;
    }
    Ok(prod)
}

/// `∂W_{0,1}(z_1)/∂t_0 · ∂W_{0,1}(z_2)/∂t_0 / (∂²F_0/∂t_0²)`.
pub fn genus0_two_point_factorized(jets: &Genus0Jets, order: i32) -> Result<OuterSeries> {
    let w1 = l_point_genus0(jets, 1, order)?.derive_t(0)?;
    let w2 = w1.with_slots(vec![Slot::zminus("z2", order)])?;
    Ok(w1.tensor(&w2)?.mul_series(&jets.d2_inv))
}

/// Checks `Σ ⟨τ_{n_1} … τ_{n_l}⟩_0 ∏ x_j^{n_j} = (x_1 + … + x_l)^{l-2}` coefficientwise.
///
/// For `l = 1` the right side has no polynomial part and every `⟨τ_n⟩_0` must vanish.
pub fn genus0_correlator_identity(f: &Series, l: usize) -> Result<Report> {
    let mut rep = Report::new();
    if l == 0 {
        return Err(Error::Domain("the correlator identity needs l >= 1".into()));
    }
    let kmax = f.spec().kmax;
    if l == 1 {
        for n in 0..=kmax {
            let c = correlator(&CorrelatorKey::new(vec![n], 0), f)?;
            rep.push(Check::rational(format!("<tau_{n}>_0 = 0"), &c, &Rational::zero()));
        }
        return Ok(rep);
    }
    if l - 2 > kmax || l as u32 > f.spec().dmax {
        return Err(Error::InsufficientTruncation(format!("l = {l} needs kmax >= {} and dmax >= {l}", l - 2)));
    }
    for ns in weak_compositions(l - 2, l) {
        let got = correlator(&CorrelatorKey::new(ns.clone(), 0), f)?;
        let mut expected = factorial_q((l - 2) as u64);
        for &n in &ns {
            expected /= factorial_q(n as u64);
        }
        rep.push(Check::rational(format!("l={l} exponents {ns:?}"), &got, &expected));
    }
    Ok(rep)
}

/// Which of the `l`-point recursions to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RecursionForm {
    /// Leibniz expansion of `λ² B(z_l) ⋯ λ² B(z_3)` applied to the two-point formula.
    Unsymmetrized,
    /// Symmetrized over all slots but `z_1`.
    Partial,
    /// Symmetrized over all slots.
    Full,
}

/// `W̃_n = λ^{2n-2} W_n` for each entry `W_n` of a tower.
pub fn tilde_tower(ws: &[OuterSeries]) -> Vec<OuterSeries> {
    ws.iter().enumerate().map(|(i, w)| w.map_coeffs(|s| s.shift_l(i as i32))).collect()
}

fn subsets(elems: &[usize]) -> Vec<(Vec<usize>, Vec<usize>)> {
    let n = elems.len();
    (0..1usize << n)
        .map(|mask| {
            let (a, b): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| mask >> i & 1 == 1);
            (a.iter().map(|&i| elems[i]).collect(), b.iter().map(|&i| elems[i]).collect())
        })
        .collect()
}

fn zderiv_avg(w: &OuterSeries, local: &[usize], k: usize) -> Result<OuterSeries> {
    let mut acc = OuterSeries::zero(w.slots().to_vec(), w.spec());
    for &b in local {
        let mut d = w.clone();
        for _ in 0..k {
            d = d.slot_derive(b)?;
        }
        acc = acc.checked_add(&d)?;
    }
    Ok(acc.scale(&frac(1, local.len() as i64)))
}

fn tderiv(w: &OuterSeries, k: usize) -> Result<OuterSeries> {
    let mut d = w.clone();
    for _ in 0..k {
        d = d.derive_t(0)?;
    }
    Ok(d)
}

/// The right-hand side of an `l`-point recursion for `λ^{2l-2} W_l(z_1, …, z_l)`.
///
/// `tilde[n-1]` must hold `W̃_n = λ^{2n-2} W_n` for `n < l`. Every factor is cut to degree
/// `dcmp` and λ-grade `l - 1 + gmax`, so the sum over `k` stops at `gmax + 1`. In the
/// symmetrized forms `|I|! W_{|I|}(z_I)` stands for `|I|! W̃_{|I|}(z_I)` and `∂^k/∂z^k`
/// acting on it for the average of `∂^k/∂z_b^k` over `b ∈ I`.
pub fn recursion_rhs(form: RecursionForm, l: usize, tilde: &[OuterSeries], gmax: u32, dcmp: u32) -> Result<OuterSeries> {
    if l < 2 || tilde.len() + 1 < l {
        return Err(Error::Domain(format!("recursion for l = {l} needs l >= 2 and W_1 .. W_{}", l - 1)));
    }
    if form == RecursionForm::Partial && l < 3 {
        return Err(Error::Domain("the partially symmetrized recursion needs l >= 3".into()));
    }
    let lcap = (l - 1) as i32 + gmax as i32;
    let order = tilde[0].slots()[0].emin.abs();
    let target = LoopSlot::z(order).slots(l);
    let spec = tilde[0].spec();
    let tight = spec.with_dmax(dcmp).with_window(spec.lmin, lcap);
    let mut out = OuterSeries::zero(target.clone(), spec);
    let all: Vec<usize> = (0..l).collect();
    let lf = factorial_q(l as u64);
    let lf1 = factorial_q(l.saturating_sub(1) as u64);
    let sizes = |i: usize, j: usize| factorial_q(i as u64) * factorial_q(j as u64);
    // Each term: coefficient, (size of the z-side factor, its derivative slots), size of
    // the t_0-side factor, and the slot positions of the two factors.
    type Term = (Rational, usize, Vec<usize>, usize, Vec<usize>, Vec<usize>);
    let mut shapes: Vec<Term> = Vec::new();
    match form {
        RecursionForm::Unsymmetrized => {
            for (i, j) in subsets(&all[2..]) {
                let pa: Vec<usize> = [vec![1], i].concat();
                let pb: Vec<usize> = [vec![0], j].concat();
                shapes.push((Rational::one(), pa.len(), vec![0], pb.len(), pa, pb));
            }
        }
        RecursionForm::Full => {
            for (i, j) in subsets(&all) {
                if i.is_empty() || j.is_empty() {
                    continue;
                }
                let c = Rational::from_integer(binomial((l - 2) as u64, (i.len() - 1) as u64)) * sizes(i.len(), j.len()) / &lf;
                shapes.push((c, i.len(), (0..i.len()).collect(), j.len(), i, j));
            }
        }
        RecursionForm::Partial => {
            for (i, j) in subsets(&all[1..]) {
                if i.is_empty() || j.is_empty() {
                    continue;
                }
                let c = Rational::from_integer(binomial((l - 3) as u64, (i.len() - 1) as u64)) * sizes(i.len(), j.len()) / &lf1;
                let i0: Vec<usize> = [vec![0], i.clone()].concat();
                let j0: Vec<usize> = [vec![0], j.clone()].concat();
                shapes.push((c.clone(), i0.len(), (1..=i.len()).collect(), j.len(), i0, j.clone()));
                shapes.push((c, i.len(), (0..i.len()).collect(), j0.len(), i, j0));
            }
        }
    }
    for k in 1..=gmax as usize + 1 {
        let ck = frac(if k % 2 == 0 { 1 } else { -1 }, 1) / factorial_q(k as u64);
        let mut cache: BTreeMap<(usize, Vec<usize>, usize), OuterSeries> = BTreeMap::new();
        for (c, na, local, nb, pa, pb) in &shapes {
            let key = (*na, local.clone(), *nb);
            if !cache.contains_key(&key) {
                let a = zderiv_avg(&tilde[na - 1], local, k)?.retruncate(tight);
                let b = tderiv(&tilde[nb - 1], k)?.map_coeffs(|s| s.shift_l(k as i32)).retruncate(tight);
                cache.insert(key.clone(), a.tensor(&b)?.retruncate(spec));
            }
            let t = &cache[&key];
            let order_pos: Vec<usize> = pa.iter().chain(pb.iter()).copied().collect();
            let perm: Vec<usize> =
                (0..l).map(|j| order_pos.iter().position(|&p| p == j).expect("positions cover 0..l")).collect();
            let placed = t.permute(&perm).with_slots(target.clone())?;
            out = out.checked_add(&placed.scale(&(&ck * c)))?;
        }
    }
    Ok(out)
}

/// Degree of `F` needed by [`npoint_recursion`] to compare at degree `dcmp`.
pub fn recursion_fdeg(l: usize, dcmp: u32, gmax: u32) -> u32 {
    dcmp + gmax + 1 + l as u32
}

/// Checks every applicable recursion form for `λ^{2l-2} W_l` against repeated loop operators.
///
/// Uses slot order `order`, couplings `t_0 .. t_{order-2}`, and compares at t-degree
/// `≤ dcmp` and genus `≤ gmax`.
pub fn npoint_recursion(l: usize, order: i32, dcmp: u32, gmax: u32) -> Result<Report> {
    if l < 2 {
        return Err(Error::Domain("recursion needs l >= 2".into()));
    }
    let kmax = (order - 2).max(0) as usize;
    let fdeg = recursion_fdeg(l, dcmp, gmax);
    let lcap = (l - 1) as i32 + gmax as i32;
    let f = free_energy_full(kmax, fdeg)?.retain(|m, _| m.l() <= lcap - 1);
    let tower = n_point_tower(&f, LoopSlot::z(order), l)?;
    let tilde = tilde_tower(&tower);
    let lhs = cut(&tilde[l - 1], dcmp, lcap);
    let mut rep = Report::new();
    let forms: &[(RecursionForm, &str)] = &[
        (RecursionForm::Unsymmetrized, "unsymmetrized"),
        (RecursionForm::Partial, "partially symmetrized"),
        (RecursionForm::Full, "fully symmetrized"),
    ];
    for &(form, name) in forms {
        if form == RecursionForm::Partial && l < 3 {
            continue;
        }
        let rhs = recursion_rhs(form, l, &tilde, gmax, dcmp)?;
        rep.push(Check::outer(format!("W_{l} {name} recursion"), &lhs.checked_sub(&rhs)?));
    }
    Ok(rep)
}

/// A connected marked graph: `n` labeled `•`-vertices, each carrying its own `∘`-leaf, and
/// unlabeled `⊛`-vertices of valence at least 3.
///
/// Core vertices `0 .. n` are the `•`-vertices (vertex `j` carries `z_{j+1}`); vertices
/// `n .. n + stars` are `⊛`-vertices. `edges` lists the core edges `(a, b)` with `a ≤ b`,
/// sorted, with repetitions for multiple edges; `(a, a)` is a loop.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarkedGraph {
    /// Number of `•`-vertices.
    pub n: usize,
    /// Number of `⊛`-vertices.
    pub stars: usize,
    /// Core edges.
    pub edges: Vec<(usize, usize)>,
    /// Order of the automorphism group fixing every labeled vertex.
    pub aut: u64,
}

impl MarkedGraph {
    fn vertices(&self) -> usize {
        self.n + self.stars
    }

    fn is_star(&self, v: usize) -> bool {
        v >= self.n
    }

    /// Valence including the `∘`-edge of a `•`-vertex; a loop counts twice.
    pub fn valence(&self, v: usize) -> usize {
        let core: usize = self.edges.iter().map(|&(a, b)| usize::from(a == v) + usize::from(b == v)).sum();
        core + usize::from(!self.is_star(v))
    }

    /// First Betti number of the core.
    pub fn genus(&self) -> usize {
        self.edges.len() + 1 - self.vertices()
    }

    /// For each edge, whether it lies on a cycle.
    pub fn cycle_edges(&self) -> Vec<bool> {
        (0..self.edges.len())
            .map(|skip| {
                let rest: Vec<(usize, usize)> =
                    self.edges.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, e)| *e).collect();
                connected(self.vertices(), &rest)
            })
            .collect()
    }

    /// `(-1)^{k-1}` where `k ≥ 1` counts the `⊛`-vertices on the cycle, and `+1` otherwise.
    pub fn sign(&self) -> i32 {
        let on = self.cycle_edges();
        let mut stars: Vec<usize> = self
            .edges
            .iter()
            .zip(&on)
            .filter(|(_, &c)| c)
            .flat_map(|(&(a, b), _)| [a, b])
            .filter(|&v| self.is_star(v))
            .collect();
        stars.sort_unstable();
        stars.dedup();
        if stars.len() > 1 && stars.len() % 2 == 0 {
            -1
        } else {
            1
        }
    }
}

fn connected(nv: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..nv).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra] = rb;
    }
    let r0 = find(&mut parent, 0);
    (0..nv).all(|v| find(&mut parent, v) == r0)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn relabel(edges: &[(usize, usize)], n: usize, perm: &[usize]) -> Vec<(usize, usize)> {
    let map = |v: usize| if v < n { v } else { n + perm[v - n] };
    let mut out: Vec<(usize, usize)> = edges
        .iter()
        .map(|&(a, b)| {
            let (x, y) = (map(a), map(b));
            (x.min(y), x.max(y))
        })
        .collect();
    out.sort_unstable();
    out
}

/// All marked graphs of genus `g ∈ {0, 1}` with `n` labeled `•`-vertices, up to isomorphism.
///
/// `⊛`-vertices are joined only to `•`-vertices, except that in genus one two
/// `⊛`-vertices (or a `⊛`-vertex and itself) may be joined along the cycle.
pub fn marked_graphs(n: usize, g: usize) -> Result<Vec<MarkedGraph>> {
    if n == 0 || g > 1 || (g == 0 && n > 4) || (g == 1 && n > 2) {
        return Err(Error::SizeLimit(format!("marked graphs implemented for n <= 4 in genus 0 and n <= 2 in genus 1, got n = {n}, g = {g}")));
    }
    let mut out = Vec::new();
    let smax = (n + 2 * g).saturating_sub(2);
    for stars in 0..=smax {
        let nv = n + stars;
        let ne = nv - 1 + g;
        let pairs: Vec<(usize, usize)> =
            (0..nv).flat_map(|a| (a..nv).map(move |b| (a, b))).filter(|&(a, b)| g == 1 || a != b).collect();
        let mut seen: BTreeMap<Vec<(usize, usize)>, ()> = BTreeMap::new();
        let perms = permutations(stars);
        let mut chosen = Vec::new();
        fn rec(
            start: usize,
            left: usize,
            pairs: &[(usize, usize)],
            chosen: &mut Vec<(usize, usize)>,
            visit: &mut dyn FnMut(&[(usize, usize)]),
        ) {
            if left == 0 {
                visit(chosen);
                return;
            }
            for i in start..pairs.len() {
                chosen.push(pairs[i]);
                rec(i, left - 1, pairs, chosen, visit);
                chosen.pop();
            }
        }
        let mut visit = |edges: &[(usize, usize)]| {
            let cand = MarkedGraph { n, stars, edges: edges.to_vec(), aut: 1 };
            if !connected(nv, edges) {
                return;
            }
            if (n..nv).any(|v| cand.valence(v) < 3) {
                return;
            }
            let on = cand.cycle_edges();
            if edges.iter().zip(&on).any(|(&(a, b), &c)| cand.is_star(a) && cand.is_star(b) && !c) {
                return;
            }
            let canon = perms.iter().map(|p| relabel(edges, n, p)).min().expect("at least one permutation");
            if seen.contains_key(&canon) {
                return;
            }
            seen.insert(canon, ());
            let vert_aut = perms.iter().filter(|p| relabel(edges, n, p) == edges).count() as u64;
            let mut mult: BTreeMap<(usize, usize), u64> = BTreeMap::new();
            for &e in edges {
                *mult.entry(e).or_insert(0) += 1;
            }
            let mut aut = vert_aut;
            for (&(a, b), &m) in &mult {
                aut *= (1..=m).product::<u64>();
                if a == b {
                    aut *= 1 << m;
                }
            }
            out.push(MarkedGraph { n, stars, edges: edges.to_vec(), aut });
        };
        rec(0, ne, &pairs, &mut chosen, &mut visit);
    }
    Ok(out)
}

/// Value of one marked graph.
///
/// A `•`-vertex of valence `v` on slot `z` weighs `(v-1)!/(z - ∂F_0/∂t_0)^v`, a `⊛`-vertex
/// of valence `v` weighs `∂^v F_0/∂t_0^v`. An edge between two `•`-vertices weighs
/// `∂²F_0/∂t_0²`, an edge between two `⊛`-vertices weighs its inverse, and every other
/// edge weighs 1. The product is multiplied by [`MarkedGraph::sign`] and divided by the
/// automorphism count.
pub fn marked_graph_weight(graph: &MarkedGraph, jets: &Genus0Jets, order: i32) -> Result<OuterSeries> {
    let i0 = jets.get(1)?;
    let mut scalar = Series::one(jets.spec());
    for v in graph.n..graph.n + graph.stars {
        scalar = &scalar * jets.get(graph.valence(v))?;
    }
    for &(a, b) in &graph.edges {
        match (graph.is_star(a), graph.is_star(b)) {
            (false, false) => scalar = &scalar * jets.get(2)?,
            (true, true) => scalar = &scalar * &jets.d2_inv,
            _ => {}
        }
    }
    let c = frac(graph.sign() as i64, graph.aut as i64);
    let mut out = OuterSeries::term(Vec::new(), Vec::new(), scalar.scale(&c));
    for j in 0..graph.n {
        let v = graph.valence(j) as u32;
        let u = inverse_power(&format!("z{}", j + 1), order, v, i0).scale(&factorial_q(v as u64 - 1));
        out = out.tensor(&u)?;
    }
    Ok(out)
}

/// The marked-graph expansion of `W_{g,n}` for `g = 0, n ≤ 4` and `g = 1, n ≤ 2`.
pub fn marked_tree_rules(jets: &Genus0Jets, n: usize, g: usize, order: i32) -> Result<OuterSeries> {
    let graphs = marked_graphs(n, g)?;
    let spec = jets.spec();
    let mut out = OuterSeries::zero(LoopSlot::z(order).slots(n), spec);
    for gr in &graphs {
        out = out.checked_add(&marked_graph_weight(gr, jets, order)?.with_slots(LoopSlot::z(order).slots(n))?)?;
    }
    Ok(out)
}

/// One-point checks: direct vs geometric vs partition-sum vs exponential forms, the
/// `t_0`-line closed form and the Bessel-number formula for `∂F/∂t_n`.
pub fn one_point_report(kmax: usize, dmax: u32, order: i32) -> Result<Report> {
    let f = free_energy_full(kmax, dmax)?;
    let slot = LoopSlot::z(order);
    let w1 = n_point(&f, slot, 1)?;
    let spec = w1.spec();
    let mut rep = Report::new();
    let geo = one_point_geometric(spec.with_dmax(dmax - 1), order)?.retruncate(spec);
    let g0 = cut(&genus_part(&w1, 0), dmax - 1, i32::MAX);
    rep.push(Check::outer("W_01 = 1/(z - I_0)", &g0.checked_sub(&cut(&geo, dmax - 1, i32::MAX))?));
    let d1 = dmax.saturating_sub(order as u32 - 1);
    let ps = one_point_partition_sum(&f, order)?;
    rep.push(Check::outer("W_1 partition-sum formula", &cut(&w1, d1, i32::MAX).checked_sub(&ps)?));
    let d2 = dmax.saturating_sub(order as u32);
    let hat = one_point_hat_exp(&f, order)?;
    let lap = laplace(&hat)?.with_slots(vec![Slot::zminus("z1", order)])?;
    rep.push(Check::outer("W_1 = Laplace(exp form of hat W_1)", &cut(&w1, d2, i32::MAX).checked_sub(&cut(&lap, d2, i32::MAX))?));
    let hat_direct = n_point(&f, LoopSlot::w(order - 1), 1)?;
    let hat_cut = cut(&hat_direct, d2, i32::MAX).with_slots(vec![Slot::wplus("w1", order)])?;
    rep.push(Check::outer("hat W_1 exp form", &hat_cut.checked_sub(&cut(&hat, d2, i32::MAX).filter(|e| e[0] < order))?));
    let line = w1.map_coeffs(|s| s.restrict_to_vars(&[0]));
    let line = cut(&line, dmax - 1, i32::MAX);
    let expected = cut(&t0_line_one_point(order, spec), dmax - 1, i32::MAX);
    rep.push(Check::outer("W_1 on the t_0-line", &line.checked_sub(&expected)?));
    for n in 0..=kmax {
        let got = f.derive(n)?.restrict_to_vars(&[0]).retruncate(spec).retain(|m, _| m.deg() < dmax);
        let want = t0_line_dfdtn(n, spec).retain(|m, _| m.deg() < dmax);
        rep.series(format!("dF/dt_{n} on the t_0-line"), &(&got - &want));
    }
    Ok(rep)
}

/// Two-point checks: the `Ŵ` product formula, the `W_2` derivative formula and the
/// genus-zero factorization.
pub fn two_point_report(kmax: usize, dmax: u32, order: i32, gmax: u32) -> Result<Report> {
    let f = free_energy_full(kmax, dmax)?;
    let mut rep = Report::new();
    let hat_slot = LoopSlot::w(order - 1);
    let hats = n_point_tower(&f, hat_slot, 2)?;
    let dc = dmax - 2;
    let lhs = cut(&hats[1].map_coeffs(|s| s.shift_l(1)), dc, i32::MAX).filter(|e| e[0] + e[1] < order);
    let rhs = cut(&two_point_hat_rhs(&hats[0])?, dc, i32::MAX);
    rep.push(Check::outer("lambda^2 hat W_2 = hat W_1(w1+w2) - hat W_1 hat W_1", &lhs.checked_sub(&rhs)?));
    let ws = n_point_tower(&f, LoopSlot::z(order), 2)?;
    let tilde = tilde_tower(&ws);
    let dr = dmax.saturating_sub(gmax + 3);
    let lcap = 1 + gmax as i32;
    let rhs2 = recursion_rhs(RecursionForm::Unsymmetrized, 2, &tilde, gmax, dr)?;
    rep.push(Check::outer("lambda^2 W_2 derivative formula", &cut(&tilde[1], dr, lcap).checked_sub(&rhs2)?));
    let sym = recursion_rhs(RecursionForm::Full, 2, &tilde, gmax, dr)?;
    rep.push(Check::outer("lambda^2 W_2 symmetrized formula", &cut(&tilde[1], dr, lcap).checked_sub(&sym)?));
    let jets = Genus0Jets::new(&f, 2)?;
    let fac = genus0_two_point_factorized(&jets, order)?;
    rep.push(Check::outer("W_02 factorization", &cut(&genus_part(&ws[1], 0), dc, i32::MAX).checked_sub(&cut(&fac, dc, i32::MAX))?));
    Ok(rep)
}

/// Genus-zero `l`-point checks for `1 ≤ l ≤ lmax`: the `∂_{t_0}` form against loop
/// operators and the correlator polynomial identity.
pub fn genus0_report(kmax: usize, dmax: u32, order: i32, lmax: usize) -> Result<Report> {
    let f = free_energy_full(kmax, dmax)?;
    let jets = Genus0Jets::new(&f, 2)?;
    let tower = n_point_tower(&f, LoopSlot::z(order), lmax)?;
    let mut rep = Report::new();
    for l in 1..=lmax {
        let dc = dmax.saturating_sub(l as u32);
        let got = cut(&genus_part(&tower[l - 1], 0), dc, i32::MAX);
        let want = cut(&l_point_genus0(&jets, l, order)?, dc, i32::MAX);
        rep.push(Check::outer(format!("W_0{l} derivative form"), &got.checked_sub(&want)?));
    }
    for l in 1..=lmax {
        rep.absorb(&format!("correlator identity l={l}"), genus0_correlator_identity(&f, l)?);
    }
    Ok(rep)
}

/// Marked-graph expansions of `W_{0,n}` (`n ≤ nmax0`) and `W_{1,n}` (`n ≤ nmax1`) against loop operators.
pub fn marked_tree_report(kmax: usize, dmax: u32, order: i32, nmax0: usize, nmax1: usize) -> Result<Report> {
    let f = free_energy_full(kmax, dmax)?;
    let nmax = nmax0.max(nmax1);
    let jets = Genus0Jets::new(&f, nmax + 2)?;
    let tower = n_point_tower(&f, LoopSlot::z(order), nmax)?;
    let mut rep = Report::new();
    for (g, top) in [(0usize, nmax0), (1, nmax1)] {
        for n in 1..=top {
            let dc = dmax.saturating_sub((n + 2 * g) as u32);
            let got = cut(&genus_part(&tower[n - 1], g as u32), dc, i32::MAX);
            let want = cut(&marked_tree_rules(&jets, n, g, order)?, dc, i32::MAX);
            rep.push(Check::outer(format!("W_{g}{n} marked graphs"), &got.checked_sub(&want)?));
        }
    }
    Ok(rep)
}
