//! Differential operators on the coupling ring and the constraints they impose on `Z`.
//!
//! A [`DiffOperator`] is a finite sum `Σ c_α(t, λ) ∂^α` with series coefficients. On top
//! of it the module builds the flow and polymer operators, puncture and dilaton, the two
//! Virasoro families `L_m` and `L̃_m`, and the join operators. Residuals against `Z` are
//! computed exactly by generating only the `Z` terms that can reach the requested
//! truncation. The module also carries the Weyl algebra in normal order and the `D_n`
//! polynomials in the symbols `J̃_k`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::Mul;

use num_bigint::BigInt;
use num_traits::{One, Zero};

use crate::combinat::{binomial, exponent_vectors, factorial, factorial_q, falling, frac, multinomial, partition_multiplicities, q};
use crate::error::{Error, Result};
use crate::icoords::compute_i;
use crate::par;
use crate::partition::{closed_form_z, correlator, correlator_table, free_energy_full, z_term, CorrelatorKey};
use crate::report::{Check, Report};
use crate::series_core::{fmt_rational, Monomial, Rational, Series, TruncationSpec};

/// A finite linear differential operator `Σ_α c_α ∂^α` over a fixed truncation spec.
///
/// Keys are derivative multi-indices stored as monomials with `ℓ = 0`; any λ-weight
/// belongs to the coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffOperator {
    spec: TruncationSpec,
    terms: BTreeMap<Monomial, Series>,
}

impl DiffOperator {
    /// The zero operator.
    pub fn zero(spec: TruncationSpec) -> Self {
        DiffOperator { spec, terms: BTreeMap::new() }
    }

    /// The identity operator.
    pub fn identity(spec: TruncationSpec) -> Self {
        DiffOperator::multiplication(&Series::one(spec))
    }

    /// Multiplication by a series.
    pub fn multiplication(s: &Series) -> Self {
        let mut op = DiffOperator::zero(s.spec());
        op.add_term(Monomial::one(), s.clone());
        op
    }

    /// `∂/∂t_k`.
    pub fn partial(spec: TruncationSpec, k: usize) -> Result<Self> {
        DiffOperator::derivative(spec, &[(k, 1)], Series::one(spec))
    }

    /// `coeff · ∂^α` with `α` given as `(index, order)` pairs.
    pub fn derivative(spec: TruncationSpec, alpha: &[(usize, u32)], coeff: Series) -> Result<Self> {
        if coeff.spec() != spec {
            return Err(Error::SpecMismatch(spec.to_string(), coeff.spec().to_string()));
        }
        if let Some(&(k, _)) = alpha.iter().find(|p| p.0 > spec.kmax && p.1 > 0) {
            return Err(Error::IndexOutOfRange { index: k, kmax: spec.kmax });
        }
        let mut op = DiffOperator::zero(spec);
        op.add_term(Monomial::from_sparse(alpha, 0), coeff);
        Ok(op)
    }

    /// Adds `coeff · ∂^α` in place; `alpha` is read through its exponents only.
    pub fn add_term(&mut self, alpha: Monomial, coeff: Series) {
        let alpha = alpha.with_l(0);
        let coeff = coeff.retruncate(self.spec);
        let sum = match self.terms.remove(&alpha) {
            Some(old) => &old + &coeff,
            None => coeff,
        };
        if !sum.is_zero() {
            self.terms.insert(alpha, sum);
        }
    }

    /// The truncation spec of the coefficients and of every operand.
    pub fn spec(&self) -> TruncationSpec {
        self.spec
    }

    /// `(α, c_α)` pairs in canonical order.
    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Series)> {
        self.terms.iter()
    }

    /// The coefficient of `∂^α`.
    pub fn coeff(&self, alpha: &[(usize, u32)]) -> Series {
        self.terms.get(&Monomial::from_sparse(alpha, 0)).cloned().unwrap_or_else(|| Series::zero(self.spec))
    }

    /// Number of derivative multi-indices present.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    /// True for the zero operator.
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Highest total derivative order.
    pub fn order(&self) -> u32 {
        self.terms.keys().map(Monomial::deg).max().unwrap_or(0)
    }

    /// Largest variable index in a derivative or a coefficient.
    pub fn max_index(&self) -> usize {
        self.terms
            .iter()
            .flat_map(|(a, c)| a.max_index().into_iter().chain(c.terms().filter_map(|(m, _)| m.max_index())))
            .max()
            .unwrap_or(0)
    }

    /// The largest drop in t-degree any term can cause: `max(|α| - mindeg c_α, 0)`.
    pub fn degree_loss(&self) -> u32 {
        self.terms
            .iter()
            .map(|(a, c)| {
                let cmin = c.terms().map(|(m, _)| m.deg()).min().unwrap_or(0);
                a.deg().saturating_sub(cmin)
            })
            .max()
            .unwrap_or(0)
    }

    /// Sum of two operators.
    pub fn add(&self, other: &DiffOperator) -> Result<DiffOperator> {
        self.check_spec(other.spec)?;
        let mut out = self.clone();
        for (a, c) in &other.terms {
            out.add_term(a.clone(), c.clone());
        }
        Ok(out)
    }

    /// Difference of two operators.
    pub fn sub(&self, other: &DiffOperator) -> Result<DiffOperator> {
        self.add(&other.scale(&-Rational::one()))
    }

    /// Scalar multiple.
    pub fn scale(&self, c: &Rational) -> DiffOperator {
        let mut out = DiffOperator::zero(self.spec);
        if c.is_zero() {
            return out;
        }
        for (a, s) in &self.terms {
            out.terms.insert(a.clone(), s.scale(c));
        }
        out
    }

    /// Left multiplication of every coefficient by `λ^{2s}`.
    pub fn shift_l(&self, s: i32) -> DiffOperator {
        let mut out = DiffOperator::zero(self.spec);
        for (a, c) in &self.terms {
            out.add_term(a.clone(), c.shift_l(s));
        }
        out
    }

    /// Applies the operator to a series in the same spec.
    pub fn apply(&self, s: &Series) -> Result<Series> {
        self.apply_filtered(s, |_| true)
    }

    /// Applies the operator, keeping only result monomials accepted by `keep`.
    pub fn apply_filtered<K>(&self, s: &Series, keep: K) -> Result<Series>
    where
        K: Fn(&Monomial) -> bool + Sync + Send,
    {
        self.check_spec(s.spec())?;
        let ops: Vec<(&Monomial, &Series)> = self.terms.iter().collect();
        let parts = par::map(&ops, |(alpha, coeff)| {
            let mut out = Series::zero(self.spec);
            let dalpha = alpha.sparse();
            for (m, c) in s.terms() {
                let Some(qm) = m.div(alpha) else { continue };
                let mut w: Option<Rational> = None;
                for (cm, cc) in coeff.terms() {
                    let r = qm.mul(cm);
                    if !keep(&r) {
                        continue;
                    }
                    let w = w.get_or_insert_with(|| {
                        let mut w = c.clone();
                        for &(k, e) in &dalpha {
                            w *= Rational::from_integer(falling(m.exp(k) as u64, e as u64));
                        }
                        w
                    });
                    out.add_term(r, &*w * cc);
                }
            }
            out
        });
        let mut total = Series::zero(self.spec);
        for p in parts {
            total = &total + &p;
        }
        Ok(total)
    }

    /// `(monomial, coefficient)` pairs of the image of a single monomial, unmerged.
    pub fn image_of(&self, m: &Monomial) -> Vec<(Monomial, Rational)> {
        let mut out = Vec::new();
        for (alpha, coeff) in &self.terms {
            let Some(qm) = m.div(alpha) else { continue };
            let mut w = Rational::one();
            for (k, e) in alpha.sparse() {
                w *= Rational::from_integer(falling(m.exp(k) as u64, e as u64));
            }
            for (cm, cc) in coeff.terms() {
                let r = qm.mul(cm);
                if self.spec.admits(&r) {
                    out.push((r, &w * cc));
                }
            }
        }
        out
    }

    /// The operator product `self ∘ other` via the Leibniz rule.
    pub fn compose(&self, other: &DiffOperator) -> Result<DiffOperator> {
        self.check_spec(other.spec)?;
        let mut out = DiffOperator::zero(self.spec);
        for (alpha, a) in &self.terms {
            let sub = divisors(alpha);
            for (beta, b) in &other.terms {
                for gamma in &sub {
                    let mut w = Rational::one();
                    let mut db = b.clone();
                    for (k, e) in gamma.sparse() {
                        w *= Rational::from_integer(binomial(alpha.exp(k) as u64, e as u64));
                        db = db.derive_n(k, e)?;
                    }
                    if db.is_zero() {
                        continue;
                    }
                    let rest = alpha.div(gamma).expect("gamma divides alpha").mul(beta);
                    out.add_term(rest, a.checked_mul(&db)?.scale(&w));
                }
            }
        }
        Ok(out)
    }

    /// The commutator `[self, other] = self ∘ other - other ∘ self`.
    pub fn commutator(&self, other: &DiffOperator) -> Result<DiffOperator> {
        self.compose(other)?.sub(&other.compose(self)?)
    }

    fn check_spec(&self, spec: TruncationSpec) -> Result<()> {
        if spec != self.spec {
            return Err(Error::SpecMismatch(self.spec.to_string(), spec.to_string()));
        }
        Ok(())
    }
}

impl fmt::Display for DiffOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(a, c)| {
                let d = a
                    .sparse()
                    .iter()
                    .map(|&(i, e)| if e == 1 { format!("d_{i}") } else { format!("d_{i}^{e}") })
                    .collect::<Vec<_>>()
                    .join("*");
                if d.is_empty() {
                    format!("({c})")
                } else {
                    format!("({c})*{d}")
                }
            })
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

/// Every monomial dividing `alpha`.
fn divisors(alpha: &Monomial) -> Vec<Monomial> {
    let mut out = vec![Monomial::one()];
    for (k, e) in alpha.sparse() {
        let mut next = Vec::with_capacity(out.len() * (e as usize + 1));
        for m in &out {
            for j in 0..=e {
                next.push(m.mul(&Monomial::from_sparse(&[(k, j)], 0)));
            }
        }
        out = next;
    }
    out
}

/// `c · λ^{2l} · t^{pairs}` as a series.
fn mono(spec: TruncationSpec, pairs: &[(usize, u32)], l: i32, c: Rational) -> Series {
    Series::monomial(spec, Monomial::from_sparse(pairs, l), c)
}

/// `t_n - δ_{n,1}` as a series, zero if `n > kmax`.
fn shifted_t(spec: TruncationSpec, n: usize) -> Series {
    let mut s = if n <= spec.kmax { mono(spec, &[(n, 1)], 0, Rational::one()) } else { Series::zero(spec) };
    if n == 1 {
        s = &s - &Series::one(spec);
    }
    s
}

/// Adds `coeff · ∂^α` to `op` when every index of `α` fits the spec.
fn push(op: &mut DiffOperator, alpha: &[(usize, u32)], coeff: Series) {
    if alpha.iter().any(|&(k, e)| e > 0 && k > op.spec.kmax) {
        return;
    }
    op.add_term(Monomial::from_sparse(alpha, 0), coeff);
}

/// The two Virasoro-type families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    /// `L_m` with the single-derivative λ² term.
    L,
    /// `L̃_m` with the quadratic λ⁴ term for `m ≥ 2`.
    LTilde,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::L => write!(f, "L"),
            Family::LTilde => write!(f, "Ltilde"),
        }
    }
}

/// `L_m` or `L̃_m` for `m ≥ -1`, keeping every term whose indices fit `spec`.
///
/// * `L_{-1} = t_0/λ² + Σ_{n≥1} (t_n - δ_{n,1}) ∂_{n-1}`
/// * `L_0 = 1 + Σ_{n≥0} (n+1)(t_n - δ_{n,1}) ∂_n`
/// * `L_m = λ²(m+1)! ∂_{m-1} + Σ_{n≥0} (t_n - δ_{n,1}) (m+n+1)!/n! ∂_{m+n}` for `m ≥ 1`
/// * `L̃_m = 2λ² m! ∂_{m-1} + λ⁴ Σ_{m_1+m_2=m} m_1! m_2! ∂_{m_1-1} ∂_{m_2-1}
///   + Σ_{n≥0} (t_n - δ_{n,1}) (m+n+1)!/n! ∂_{m+n}` for `m ≥ 2`, with `L̃_m = L_m` below.
pub fn virasoro(m: i32, family: Family, spec: TruncationSpec) -> Result<DiffOperator> {
    if m < -1 {
        return Err(Error::Domain(format!("virasoro index {m} < -1")));
    }
    let k = spec.kmax;
    let mut op = DiffOperator::zero(spec);
    match m {
        -1 => {
            op.add_term(Monomial::one(), mono(spec, &[(0, 1)], -1, Rational::one()));
            for n in 1..=k {
                push(&mut op, &[(n - 1, 1)], shifted_t(spec, n));
            }
        }
        0 => {
            op.add_term(Monomial::one(), Series::one(spec));
            for n in 0..=k {
                push(&mut op, &[(n, 1)], shifted_t(spec, n).scale(&q(n as i64 + 1)));
            }
        }
        _ => {
            let m = m as usize;
            let lead = if family == Family::LTilde && m >= 2 { 2 * factorial(m as u64) } else { factorial(m as u64 + 1) };
            push(&mut op, &[(m - 1, 1)], Series::monomial(spec, Monomial::lambda(1), Rational::from_integer(lead)));
            if family == Family::LTilde {
                for m1 in 1..m {
                    let m2 = m - m1;
                    let c = Rational::from_integer(factorial(m1 as u64) * factorial(m2 as u64));
                    push(&mut op, &[(m1 - 1, 1), (m2 - 1, 1)], Series::monomial(spec, Monomial::lambda(2), c));
                }
            }
            for n in 0..=k {
                let c = Rational::from_integer(factorial((m + n + 1) as u64)) / factorial_q(n as u64);
                push(&mut op, &[(m + n, 1)], shifted_t(spec, n).scale(&c));
            }
        }
    }
    Ok(op)
}

/// The puncture operator `t_0 + Σ_{n≥1} (t_n - δ_{n,1}) λ² ∂_{n-1}`.
pub fn puncture(spec: TruncationSpec) -> DiffOperator {
    let mut op = DiffOperator::multiplication(&mono(spec, &[(0, 1)], 0, Rational::one()));
    for n in 1..=spec.kmax {
        push(&mut op, &[(n - 1, 1)], shifted_t(spec, n).shift_l(1));
    }
    op
}

/// The dilaton operator `1 + Σ_{n≥0} (n+1)(t_n - δ_{n,1}) ∂_n`.
pub fn dilaton(spec: TruncationSpec) -> DiffOperator {
    let mut op = DiffOperator::identity(spec);
    for n in 0..=spec.kmax {
        push(&mut op, &[(n, 1)], shifted_t(spec, n).scale(&q(n as i64 + 1)));
    }
    op
}

/// The flow operator `∂_n - λ^{2n}/(n+1)! ∂_0^{n+1}`.
pub fn flow_operator(n: usize, spec: TruncationSpec) -> Result<DiffOperator> {
    let mut op = DiffOperator::partial(spec, n)?;
    let c = -Rational::one() / factorial_q(n as u64 + 1);
    op.add_term(Monomial::from_sparse(&[(0, n as u32 + 1)], 0), Series::monomial(spec, Monomial::lambda(n as i32), c));
    Ok(op)
}

/// The polymer operator `Σ_n (t_n - δ_{n,1}) λ^{2n}/n! ∂_0^n`.
pub fn polymer_operator(spec: TruncationSpec) -> DiffOperator {
    let mut op = DiffOperator::zero(spec);
    for n in 0..=spec.kmax {
        let c = shifted_t(spec, n).shift_l(n as i32).scale(&(Rational::one() / factorial_q(n as u64)));
        op.add_term(Monomial::from_sparse(&[(0, n as u32)], 0), c);
    }
    op
}

/// The join operator `λ^{2k} ∂_{n_1-1} ⋯ ∂_{n_k-1} - multinomial(n) λ² ∂_{Σn_j - 1}`.
pub fn join_operator(ns: &[usize], spec: TruncationSpec) -> Result<DiffOperator> {
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::Domain("join parts must be positive".into()));
    }
    let total: usize = ns.iter().sum();
    if total - 1 > spec.kmax {
        return Err(Error::IndexOutOfRange { index: total - 1, kmax: spec.kmax });
    }
    let alpha: Vec<(usize, u32)> = ns.iter().map(|&n| (n - 1, 1)).collect();
    let mut op = DiffOperator::derivative(spec, &alpha, Series::monomial(spec, Monomial::lambda(ns.len() as i32), Rational::one()))?;
    let parts: Vec<u64> = ns.iter().map(|&n| n as u64).collect();
    let c = -Rational::from_integer(multinomial(&parts));
    op.add_term(Monomial::var(total - 1), Series::monomial(spec, Monomial::lambda(1), c));
    Ok(op)
}

/// A roomy working spec for residual computations on `t_0..t_{kmax+reach}`.
pub fn working_spec(kmax: usize, dmax: u32, reach: usize) -> TruncationSpec {
    let d = dmax + 2 * (kmax + reach) as u32 + 8;
    TruncationSpec::new(kmax + reach, d, -(d as i32) - 4, d as i32 * (kmax + reach) as i32 + 4)
        .expect("window is non-empty")
}

/// The `Z` terms of `op.spec()` that can reach `t_0..t_kmax` at degree `≤ dmax` under `op`.
pub fn z_support(op: &DiffOperator, kmax: usize, dmax: u32) -> Series {
    let spec = op.spec();
    let mut wanted: BTreeSet<Vec<u16>> = BTreeSet::new();
    for (alpha, coeff) in op.terms() {
        let cmin = coeff.terms().map(|(m, _)| m.deg()).min().unwrap_or(0);
        if cmin > dmax {
            continue;
        }
        let mut a = alpha.exps().to_vec();
        a.resize(spec.kmax.max(kmax) + 1, 0);
        for v in exponent_vectors(kmax + 1, dmax - cmin) {
            let mut e = a.clone();
            for (slot, x) in v.iter().enumerate() {
                e[slot] += x;
            }
            wanted.insert(e);
        }
    }
    let wanted: Vec<Vec<u16>> = wanted.into_iter().collect();
    let terms = par::map(&wanted, |e| z_term(e));
    Series::from_terms(spec, terms.into_iter().flatten())
}

/// The part of a series living on `t_0..t_kmax` with degree `≤ dmax`.
pub fn restrict(s: &Series, kmax: usize, dmax: u32) -> Series {
    s.retain(|m, _| m.deg() <= dmax && m.max_index().is_none_or(|i| i <= kmax))
}

/// `op Z` restricted to `t_0..t_kmax` and degree `≤ dmax`, computed exactly.
///
/// `build` receives a working spec on `t_0..t_{kmax+reach}`; every term of the operator
/// dropped by that spec must carry a coefficient outside `t_0..t_kmax`.
pub fn residual_on_z<F>(build: F, reach: usize, kmax: usize, dmax: u32) -> Result<Series>
where
    F: Fn(TruncationSpec) -> Result<DiffOperator>,
{
    let op = build(working_spec(kmax, dmax, reach))?;
    let z = z_support(&op, kmax, dmax);
    op.apply_filtered(&z, |m| m.deg() <= dmax && m.max_index().is_none_or(|i| i <= kmax))
}

/// `L_m Z` (or `L̃_m Z`) restricted to `t_0..t_kmax`, degree `≤ dmax`.
pub fn virasoro_residual(m: i32, family: Family, kmax: usize, dmax: u32) -> Result<Series> {
    let reach = (m + 1).max(1) as usize;
    residual_on_z(|s| virasoro(m, family, s), reach, kmax, dmax)
}

/// Checks `L_m Z = 0` and `L̃_m Z = 0` for `-1 ≤ m ≤ mmax`.
pub fn virasoro_report(mmax: i32, kmax: usize, dmax: u32) -> Result<Report> {
    let mut r = Report::new();
    for family in [Family::L, Family::LTilde] {
        for m in -1..=mmax {
            let res = virasoro_residual(m, family, kmax, dmax)?;
            r.series(format!("{family}_{m} Z = 0"), &res);
        }
    }
    Ok(r)
}

/// All monomials in `t_0..t_kmax` of degree `≤ dmax` with `ℓ = 0`.
pub fn monomial_basis(kmax: usize, dmax: u32) -> Vec<Monomial> {
    exponent_vectors(kmax + 1, dmax).iter().map(|e| Monomial::from_dense(e, 0)).collect()
}

/// `[A, B] f` computed as `A(B f) - B(A f)`.
pub fn commutator_apply(a: &DiffOperator, b: &DiffOperator, f: &Series) -> Result<Series> {
    Ok(&a.apply(&b.apply(f)?)? - &b.apply(&a.apply(f)?)?)
}

/// The spec in which two operators applied to the basis of `(kmax, dmax)` lose nothing.
pub fn commutator_spec(kmax: usize, dmax: u32) -> TruncationSpec {
    TruncationSpec::new(kmax + 2, dmax + 2, -3, 4).expect("window is non-empty")
}

/// `[X_m, X_n] f - (m-n) X_{m+n} f` on a basis monomial, for either family.
pub fn commutator_defect(m: i32, n: i32, family: Family, basis: &Monomial, spec: TruncationSpec) -> Result<Series> {
    let a = virasoro(m, family, spec)?;
    let b = virasoro(n, family, spec)?;
    let f = Series::monomial(spec, basis.clone(), Rational::one());
    let lhs = commutator_apply(&a, &b, &f)?;
    Ok(&lhs - &virasoro(m + n, family, spec)?.apply(&f)?.scale(&q((m - n) as i64)))
}

/// Images of monomials under one operator, computed on demand.
struct ImageCache<'a> {
    op: &'a DiffOperator,
    images: HashMap<Monomial, Vec<(Monomial, Rational)>>,
}

impl<'a> ImageCache<'a> {
    fn new(op: &'a DiffOperator) -> Self {
        ImageCache { op, images: HashMap::new() }
    }

    fn apply(&mut self, f: &BTreeMap<Monomial, Rational>) -> BTreeMap<Monomial, Rational> {
        let mut out: BTreeMap<Monomial, Rational> = BTreeMap::new();
        for (m, c) in f {
            let op = self.op;
            let img = self.images.entry(m.clone()).or_insert_with(|| op.image_of(m));
            for (r, v) in img.iter() {
                *out.entry(r.clone()).or_insert_with(Rational::zero) += c * v;
            }
        }
        out.retain(|_, v| !v.is_zero());
        out
    }
}

/// Checks `[X_m, X_n] = (m-n) X_{m+n}` for `-1 ≤ m < n ≤ mmax` on every basis monomial.
pub fn commutator_report(family: Family, mmax: i32, kmax: usize, dmax: u32) -> Result<Report> {
    let spec = commutator_spec(kmax, dmax);
    let basis = monomial_basis(kmax, dmax);
    let ops: Vec<DiffOperator> = (-1..=2 * mmax).map(|m| virasoro(m, family, spec)).collect::<Result<_>>()?;
    let pairs: Vec<(i32, i32)> = (-1..=mmax).flat_map(|m| ((m + 1)..=mmax).map(move |n| (m, n))).collect();
    let checks = par::map(&pairs, |&(m, n)| {
        let op = |i: i32| &ops[(i + 1) as usize];
        let (mut a, mut b, mut c) = (ImageCache::new(op(m)), ImageCache::new(op(n)), ImageCache::new(op(m + n)));
        let scale = q((m - n) as i64);
        let mut first = None;
        for mono in &basis {
            let f: BTreeMap<Monomial, Rational> = [(mono.clone(), Rational::one())].into();
            let mut d = a.apply(&b.apply(&f));
            for (r, v) in b.apply(&a.apply(&f)) {
                *d.entry(r).or_insert_with(Rational::zero) -= v;
            }
            for (r, v) in c.apply(&f) {
                *d.entry(r).or_insert_with(Rational::zero) -= &scale * v;
            }
            if let Some((r, v)) = d.iter().find(|(_, v)| !v.is_zero()) {
                first = Some(format!("on {mono}: {} {r}", fmt_rational(v)));
                break;
            }
        }
        let name = format!("[{family}_{m}, {family}_{n}] = {} {family}_{}", m - n, m + n);
        Check::flag(name, first.is_none(), first.unwrap_or_default())
    });
    let mut r = Report::new();
    for c in checks {
        r.push(c);
    }
    Ok(r)
}

/// The flow residuals for `1 ≤ n ≤ nmax`, the polymer residual and the operator solution.
pub fn flow_polymer_check(kmax: usize, dmax: u32, nmax: usize) -> Result<Report> {
    if nmax > kmax {
        return Err(Error::IndexOutOfRange { index: nmax, kmax });
    }
    let mut r = Report::new();
    for n in 0..=nmax {
        let res = residual_on_z(|s| flow_operator(n, s), 0, kmax, dmax)?;
        r.series(format!("flow n={n}"), &res);
    }
    let res = residual_on_z(|s| Ok(polymer_operator(s)), 0, kmax, dmax)?;
    r.series("polymer", &res);
    let z = closed_form_z(TruncationSpec::z_window(kmax, dmax))?;
    let sol = operator_solution(kmax, dmax)?;
    r.series("operator solution", &(&sol.retruncate(z.spec()) - &z));
    Ok(r)
}

/// `exp(Σ_{n≥1} λ^{2n} t_n/(n+1)! ∂_0^{n+1}) exp(t_0²/2λ²)` on `t_0..t_kmax`, degree `≤ dmax`.
///
/// The Gaussian is expanded far enough in `t_0` that every surviving term is exact; terms
/// that can no longer fall to degree `dmax` are discarded along the way.
pub fn operator_solution(kmax: usize, dmax: u32) -> Result<Series> {
    let top = dmax * (kmax as u32 + 1);
    let spec = TruncationSpec::new(kmax, top, -(top as i32) / 2 - 1, (dmax * kmax as u32) as i32 + 1)?;
    let mut op = DiffOperator::zero(spec);
    for n in 1..=kmax {
        let c = Rational::one() / factorial_q(n as u64 + 1);
        op.add_term(Monomial::from_sparse(&[(0, n as u32 + 1)], 0), mono(spec, &[(n, 1)], n as i32, c));
    }
    let reachable = |m: &Monomial| {
        let j = m.exp(0);
        m.deg() - j + j.div_ceil(kmax as u32 + 1) <= dmax
    };
    let mut term = Series::zero(spec);
    for k in 0..=top / 2 {
        let c = Rational::new(BigInt::one(), BigInt::from(2).pow(k) * factorial(k as u64));
        term.add_term(Monomial::from_sparse(&[(0, 2 * k)], -(k as i32)), c);
    }
    let mut total = term.up_to_degree(dmax);
    let mut k = 0u64;
    while !term.is_zero() {
        k += 1;
        term = op.apply(&term)?.retain(|m, _| reachable(m)).scale(&frac(1, k as i64));
        total = &total + &term.up_to_degree(dmax);
    }
    Ok(total)
}

/// The join residual for `(n_1, …, n_k)` on `t_0..t_kmax`, degree `≤ dmax`.
pub fn join_check(ns: &[usize], kmax: usize, dmax: u32) -> Result<Series> {
    residual_on_z(|s| join_operator(ns, s), 0, kmax, dmax)
}

/// Checks that the puncture and dilaton residuals vanish and that the operators equal
/// `λ² L_{-1}` and `L_0`.
pub fn puncture_dilaton_report(kmax: usize, dmax: u32) -> Result<Report> {
    let mut r = Report::new();
    r.series("puncture Z = 0", &residual_on_z(|s| Ok(puncture(s)), 1, kmax, dmax)?);
    r.series("dilaton Z = 0", &residual_on_z(|s| Ok(dilaton(s)), 0, kmax, dmax)?);
    let spec = working_spec(kmax, dmax, 1);
    let lm1 = virasoro(-1, Family::L, spec)?.shift_l(1);
    let l0 = virasoro(0, Family::L, spec)?;
    r.push(Check::flag("puncture = lambda^2 L_-1", puncture(spec) == lm1, "operators differ"));
    r.push(Check::flag("dilaton = L_0", dilaton(spec) == l0, "operators differ"));
    Ok(r)
}

/// Checks the τ_1-insertion consequences of the dilaton equation on the correlators of `f`.
///
/// `⟨τ_1^m⟩_1 = (m-1)!/2`, and `⟨τ_1^m ∏ τ_{a_j}⟩_g = ∏_{k<m} (g-1+n+k) ⟨∏ τ_{a_j}⟩_g`
/// for every stored key with all `a_j ≠ 1`.
pub fn dilaton_consequences(f: &Series) -> Report {
    let spec = f.spec();
    let gmax = (spec.lmax + 1).max(0) as u32;
    let mut r = Report::new();
    let mut m = 1usize;
    loop {
        let key = CorrelatorKey::new(vec![1; m], 1);
        let Ok(v) = correlator(&key, f) else { break };
        r.push(Check::rational(key.to_string(), &v, &(factorial_q(m as u64 - 1) / q(2))));
        m += 1;
    }
    for (key, base) in correlator_table(f, gmax) {
        if key.indices.contains(&1) || key.indices.is_empty() {
            continue;
        }
        let n = key.indices.len() as i64;
        let g = key.genus as i64;
        let mut expected = base.clone();
        for m in 1.. {
            expected *= q(g - 1 + n + m as i64 - 1);
            let mut idx = key.indices.clone();
            idx.extend(std::iter::repeat_n(1, m));
            let ext = CorrelatorKey::new(idx, key.genus);
            let Ok(v) = correlator(&ext, f) else { break };
            r.push(Check::rational(ext.to_string(), &v, &expected));
        }
    }
    r
}

/// Checks the I-coordinate form of `L_{-1}`.
///
/// With `∂/∂I_0 = Σ_k (∂t_k/∂I_0) ∂/∂t_k`, the report asserts `∂F_g/∂I_0 = 0` for
/// `1 ≤ g ≤ gmax`, `∂F_0/∂I_0 = t_0`, and `t_0 = Σ_n (-1)^n I_0^n I_n / n!`.
pub fn l_minus1_in_i_report(kmax: usize, dmax: u32, gmax: u32) -> Result<Report> {
    let fspec = TruncationSpec::z_window(kmax, dmax + 1);
    let f = free_energy_full(kmax, dmax + 1)?;
    let bundle = compute_i(fspec)?;
    let mut d_i0 = DiffOperator::zero(fspec);
    for k in 0..=kmax {
        d_i0.add_term(Monomial::var(k), crate::icoords::dt_di(&bundle, k, 0)?);
    }
    let applied = restrict(&d_i0.apply(&f)?, kmax, dmax);
    let mut r = Report::new();
    let t0 = restrict(&mono(fspec, &[(0, 1)], 0, Rational::one()), kmax, dmax);
    r.series("dF_0/dI_0 = t_0", &(&applied.slice_l(-1).shift_l(1) - &t0));
    for g in 1..=gmax {
        r.series(format!("dF_{g}/dI_0 = 0"), &applied.slice_l(g as i32 - 1));
    }
    let mut rhs = Series::zero(fspec);
    let mut pow = Series::one(fspec);
    for n in 0..=kmax {
        let sign = if n % 2 == 0 { Rational::one() } else { -Rational::one() };
        rhs = &rhs + &pow.checked_mul(&bundle.i[n])?.scale(&(sign / factorial_q(n as u64)));
        pow = pow.checked_mul(&bundle.i[0])?;
    }
    r.series("t_0 = sum (-I_0)^n I_n / n!", &restrict(&(&rhs - &mono(fspec, &[(0, 1)], 0, Rational::one())), kmax, dmax));
    Ok(r)
}

/// An element of the Weyl algebra `Σ c x^m ∂^n` stored in normal order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WeylElement {
    terms: BTreeMap<(u32, u32), Rational>,
}

impl WeylElement {
    /// The zero element.
    pub fn zero() -> Self {
        WeylElement::default()
    }

    /// The unit.
    pub fn one() -> Self {
        WeylElement::term(Rational::one(), 0, 0)
    }

    /// `c x^m ∂^n`.
    pub fn term(c: Rational, m: u32, n: u32) -> Self {
        let mut w = WeylElement::zero();
        w.add_term(c, m, n);
        w
    }

    /// `∂^n x^m` rewritten as `Σ_j j! C(n,j) C(m,j) x^{m-j} ∂^{n-j}`.
    pub fn d_then_x(n: u32, m: u32) -> Self {
        WeylElement::term(Rational::one(), 0, n) * WeylElement::term(Rational::one(), m, 0)
    }

    /// Adds `c x^m ∂^n` in place.
    pub fn add_term(&mut self, c: Rational, m: u32, n: u32) {
        if c.is_zero() {
            return;
        }
        let e = self.terms.entry((m, n)).or_insert_with(Rational::zero);
        *e += c;
        if e.is_zero() {
            self.terms.remove(&(m, n));
        }
    }

    /// `((m, n), c)` pairs of the normal-ordered form.
    pub fn terms(&self) -> impl Iterator<Item = (&(u32, u32), &Rational)> {
        self.terms.iter()
    }

    /// Coefficient of `x^m ∂^n`.
    pub fn coeff(&self, m: u32, n: u32) -> Rational {
        self.terms.get(&(m, n)).cloned().unwrap_or_else(Rational::zero)
    }

    /// True for the zero element.
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Sum.
    pub fn add(&self, other: &WeylElement) -> WeylElement {
        let mut out = self.clone();
        for (&(m, n), c) in &other.terms {
            out.add_term(c.clone(), m, n);
        }
        out
    }

    /// Scalar multiple.
    pub fn scale(&self, c: &Rational) -> WeylElement {
        let mut out = WeylElement::zero();
        for (&(m, n), v) in &self.terms {
            out.add_term(v * c, m, n);
        }
        out
    }

    /// Difference.
    pub fn sub(&self, other: &WeylElement) -> WeylElement {
        self.add(&other.scale(&-Rational::one()))
    }

    /// `[self, other]`.
    pub fn commutator(&self, other: &WeylElement) -> WeylElement {
        (self.clone() * other.clone()).sub(&(other.clone() * self.clone()))
    }

    /// The anti-normal form `Σ c ∂^n x^m` as `((n, m), c)`, using
    /// `x^m ∂^n = Σ_j (-1)^j j! C(n,j) C(m,j) ∂^{n-j} x^{m-j}`.
    pub fn to_anti_normal(&self) -> BTreeMap<(u32, u32), Rational> {
        let mut out: BTreeMap<(u32, u32), Rational> = BTreeMap::new();
        for (&(m, n), c) in &self.terms {
            for j in 0..=m.min(n) {
                let w = Rational::from_integer(factorial(j as u64) * binomial(n as u64, j as u64) * binomial(m as u64, j as u64));
                let w = if j % 2 == 0 { w } else { -w };
                *out.entry((n - j, m - j)).or_insert_with(Rational::zero) += c * w;
            }
        }
        out.retain(|_, v| !v.is_zero());
        out
    }

    /// Action on a polynomial in `x` given by its coefficient vector.
    pub fn apply(&self, poly: &[Rational]) -> Vec<Rational> {
        let mut out: Vec<Rational> = Vec::new();
        for (&(m, n), c) in &self.terms {
            for (k, a) in poly.iter().enumerate() {
                if (k as u32) < n || a.is_zero() {
                    continue;
                }
                let e = k - n as usize + m as usize;
                if out.len() <= e {
                    out.resize(e + 1, Rational::zero());
                }
                out[e] += c * a * Rational::from_integer(falling(k as u64, n as u64));
            }
        }
        while out.last().is_some_and(Zero::is_zero) {
            out.pop();
        }
        out
    }
}

impl Mul for WeylElement {
    type Output = WeylElement;

    /// `x^{m_1}∂^{n_1} · x^{m_2}∂^{n_2} = Σ_j j! C(n_1,j) C(m_2,j) x^{m_1+m_2-j} ∂^{n_1+n_2-j}`.
    fn mul(self, rhs: WeylElement) -> WeylElement {
        let mut out = WeylElement::zero();
        for (&(m1, n1), c1) in &self.terms {
            for (&(m2, n2), c2) in &rhs.terms {
                for j in 0..=n1.min(m2) {
                    let w = Rational::from_integer(factorial(j as u64) * binomial(n1 as u64, j as u64) * binomial(m2 as u64, j as u64));
                    out.add_term(c1 * c2 * w, m1 + m2 - j, n1 + n2 - j);
                }
            }
        }
        out
    }
}

/// The normal-ordered product of two Weyl-algebra elements.
pub fn weyl_product(a: &WeylElement, b: &WeylElement) -> WeylElement {
    a.clone() * b.clone()
}

impl fmt::Display for WeylElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(&(m, n), c)| {
                let mut s = fmt_rational(c);
                if m > 0 {
                    s.push_str(&format!("*x^{m}"));
                }
                if n > 0 {
                    s.push_str(&format!("*d^{n}"));
                }
                s
            })
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

/// A polynomial in `J̃_0, J̃_1, …` whose monomials with `k` symbols carry `λ^{-2k}`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct JPoly {
    terms: BTreeMap<Vec<u16>, Rational>,
}

impl JPoly {
    /// The zero polynomial.
    pub fn zero() -> Self {
        JPoly::default()
    }

    /// The unit.
    pub fn one() -> Self {
        let mut p = JPoly::zero();
        p.add_term(vec![], Rational::one());
        p
    }

    /// Adds `c ∏ J̃_j^{e_j}` in place.
    pub fn add_term(&mut self, mut exps: Vec<u16>, c: Rational) {
        while exps.last() == Some(&0) {
            exps.pop();
        }
        if c.is_zero() {
            return;
        }
        let e = self.terms.entry(exps.clone()).or_insert_with(Rational::zero);
        *e += c;
        if e.is_zero() {
            self.terms.remove(&exps);
        }
    }

    /// `(exponents, coefficient)` pairs.
    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u16>, &Rational)> {
        self.terms.iter()
    }

    /// Coefficient of `∏ J̃_j^{e_j}` given as `(j, e_j)` pairs.
    pub fn coeff(&self, pairs: &[(usize, u16)]) -> Rational {
        let len = pairs.iter().map(|p| p.0 + 1).max().unwrap_or(0);
        let mut v = vec![0u16; len];
        for &(j, e) in pairs {
            v[j] += e;
        }
        while v.last() == Some(&0) {
            v.pop();
        }
        self.terms.get(&v).cloned().unwrap_or_else(Rational::zero)
    }

    /// The power of λ carried by a monomial: `-2 · (number of symbols)`.
    pub fn lambda_power(exps: &[u16]) -> i32 {
        -2 * exps.iter().map(|&e| e as i32).sum::<i32>()
    }

    /// `P = Σ_j J̃_{j+1} ∂/∂J̃_j + J̃_0 / λ²` applied once.
    pub fn raise(&self) -> JPoly {
        let mut out = JPoly::zero();
        for (e, c) in &self.terms {
            let mut v = e.clone();
            v.resize(e.len() + 1, 0);
            let mut up = v.clone();
            up[0] += 1;
            out.add_term(up, c.clone());
            for j in 0..e.len() {
                if v[j] == 0 {
                    continue;
                }
                let mut w = v.clone();
                let mult = w[j];
                w[j] -= 1;
                w[j + 1] += 1;
                out.add_term(w, c * q(mult as i64));
            }
        }
        out
    }
}

impl fmt::Display for JPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(e, c)| {
                let mut s = fmt_rational(c);
                let lp = JPoly::lambda_power(e);
                if lp != 0 {
                    s.push_str(&format!("*lambda^{lp}"));
                }
                for (j, &x) in e.iter().enumerate() {
                    match x {
                        0 => {}
                        1 => s.push_str(&format!("*J_{j}")),
                        _ => s.push_str(&format!("*J_{j}^{x}")),
                    }
                }
                s
            })
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

/// `D_0, …, D_nmax` by the recursion `D_{n+1} = P D_n`.
pub fn dn_recursive(nmax: usize) -> Vec<JPoly> {
    let mut out = vec![JPoly::one()];
    for n in 0..nmax {
        out.push(out[n].raise());
    }
    out
}

/// `D_n = n! Σ_{Σ j m_j = n} ∏_j J̃_{j-1}^{m_j} / ((j!)^{m_j} m_j!)`.
pub fn dn_closed(n: usize) -> JPoly {
    let mut p = JPoly::zero();
    if n == 0 {
        return JPoly::one();
    }
    for mults in partition_multiplicities(n) {
        let mut den = BigInt::one();
        let mut exps = vec![0u16; n];
        for (j, &mj) in mults.iter().enumerate() {
            if j == 0 || mj == 0 {
                continue;
            }
            exps[j - 1] = mj as u16;
            den *= factorial(j as u64).pow(mj as u32) * factorial(mj as u64);
        }
        p.add_term(exps, Rational::new(factorial(n as u64), den));
    }
    p
}

/// `D_0, …, D_nmax`, computed both ways; an error if the two disagree.
pub fn dn_polynomials(nmax: usize) -> Result<Vec<JPoly>> {
    if nmax > 12 {
        return Err(Error::SizeLimit(format!("D_n with n = {nmax} > 12")));
    }
    let rec = dn_recursive(nmax);
    for (n, d) in rec.iter().enumerate() {
        if *d != dn_closed(n) {
            return Err(Error::Domain(format!("D_{n}: recursion and closed form disagree")));
        }
    }
    Ok(rec)
}
