use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_traits::{One, Zero};

use super::{fmt_rational, Monomial, Rational, TruncationSpec};
use crate::error::{Error, Result};
use crate::par;

/// Work items below this many term pairs are multiplied sequentially.
const PAR_THRESHOLD: usize = 4096;

/// Terms of one homogeneous t-degree.
type Component = Vec<(Monomial, Rational)>;

/// A scaled product `coef · A · Σ B_i` of term lists.
type Job<'a> = (Rational, &'a [(Monomial, Rational)], Vec<&'a [(Monomial, Rational)]>);

/// A truncated series `Σ c · λ^{2ℓ} ∏ t_k^{e_k}` with exact rational coefficients.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Series {
    spec: TruncationSpec,
    terms: BTreeMap<Monomial, Rational>,
}

impl Series {
    /// The zero series.
    pub fn zero(spec: TruncationSpec) -> Self {
        Series { spec, terms: BTreeMap::new() }
    }

    /// The constant `c`, dropped if `ℓ = 0` lies outside the window.
    pub fn constant(spec: TruncationSpec, c: Rational) -> Self {
        Series::monomial(spec, Monomial::one(), c)
    }

    /// The constant 1.
    pub fn one(spec: TruncationSpec) -> Self {
        Series::constant(spec, Rational::one())
    }

    /// A single term, dropped if it does not fit the spec.
    pub fn monomial(spec: TruncationSpec, m: Monomial, c: Rational) -> Self {
        let mut s = Series::zero(spec);
        s.add_term(m, c);
        s
    }

    /// The variable `t_k`.
    pub fn var(spec: TruncationSpec, k: usize) -> Result<Self> {
        if k > spec.kmax {
            return Err(Error::IndexOutOfRange { index: k, kmax: spec.kmax });
        }
        Ok(Series::monomial(spec, Monomial::var(k), Rational::one()))
    }

    /// Collects terms, summing repeated monomials and dropping anything outside the spec.
    pub fn from_terms<I>(spec: TruncationSpec, terms: I) -> Self
    where
        I: IntoIterator<Item = (Monomial, Rational)>,
    {
        let mut s = Series::zero(spec);
        for (m, c) in terms {
            s.add_term(m, c);
        }
        s
    }

    /// The truncation spec.
    pub fn spec(&self) -> TruncationSpec {
        self.spec
    }

    /// Terms in canonical order.
    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Rational)> {
        self.terms.iter()
    }

    /// Number of stored terms.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    /// True for the zero series.
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Coefficient of a monomial, zero when absent.
    pub fn coeff(&self, m: &Monomial) -> Rational {
        self.terms.get(m).cloned().unwrap_or_else(Rational::zero)
    }

    /// Coefficient of the monomial given by `(index, exponent)` pairs and grade `l`.
    pub fn coeff_of(&self, pairs: &[(usize, u32)], l: i32) -> Rational {
        self.coeff(&Monomial::from_sparse(pairs, l))
    }

    /// The first term in canonical order.
    pub fn first_term(&self) -> Option<(&Monomial, &Rational)> {
        self.terms.iter().next()
    }

    /// Adds `c · m` in place if `m` fits the spec.
    pub fn add_term(&mut self, m: Monomial, c: Rational) {
        if c.is_zero() || !self.spec.admits(&m) {
            return;
        }
        accumulate(&mut self.terms, m, c);
    }

    /// Re-reads the series under another spec, keeping admissible terms only.
    pub fn retruncate(&self, spec: TruncationSpec) -> Series {
        Series::from_terms(spec, self.terms.iter().map(|(m, c)| (m.clone(), c.clone())))
    }

    /// Keeps the terms satisfying `pred`.
    pub fn retain<F: Fn(&Monomial, &Rational) -> bool>(&self, pred: F) -> Series {
        let terms = self
            .terms
            .iter()
            .filter(|(m, c)| pred(m, c))
            .map(|(m, c)| (m.clone(), c.clone()))
            .collect();
        Series { spec: self.spec, terms }
    }

    /// The terms with λ-grade exactly `l`.
    pub fn slice_l(&self, l: i32) -> Series {
        self.retain(|m, _| m.l() == l)
    }

    /// The terms of t-degree at most `d`.
    pub fn up_to_degree(&self, d: u32) -> Series {
        self.retain(|m, _| m.deg() <= d)
    }

    /// Sets every coupling outside `allowed` to zero.
    pub fn restrict_to_vars(&self, allowed: &[usize]) -> Series {
        self.retain(|m, _| m.sparse().iter().all(|(i, _)| allowed.contains(i)))
    }

    fn check_spec(&self, other: &Series) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::SpecMismatch(self.spec.to_string(), other.spec.to_string()));
        }
        Ok(())
    }

    /// Exact sum.
    pub fn checked_add(&self, other: &Series) -> Result<Series> {
        self.check_spec(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            accumulate(&mut out.terms, m.clone(), c.clone());
        }
        Ok(out)
    }

    /// Exact difference.
    pub fn checked_sub(&self, other: &Series) -> Result<Series> {
        self.check_spec(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            accumulate(&mut out.terms, m.clone(), -c.clone());
        }
        Ok(out)
    }

    /// Exact product, truncated to the spec.
    pub fn checked_mul(&self, other: &Series) -> Result<Series> {
        self.check_spec(other)?;
        let a: Component = self.terms.iter().map(|(m, c)| (m.clone(), c.clone())).collect();
        let b = other.by_degree();
        let b_refs: Vec<&[(Monomial, Rational)]> = b.iter().map(|c| c.as_slice()).collect();
        let map = product_sum(&[(Rational::one(), &a, b_refs)], &self.spec, true);
        Ok(Series { spec: self.spec, terms: map })
    }

    /// Multiplies every coefficient by `c`.
    pub fn scale(&self, c: &Rational) -> Series {
        if c.is_zero() {
            return Series::zero(self.spec);
        }
        let terms = self.terms.iter().map(|(m, x)| (m.clone(), x * c)).collect();
        Series { spec: self.spec, terms }
    }

    /// Multiplies by `c · m`, truncating.
    pub fn mul_monomial(&self, m: &Monomial, c: &Rational) -> Series {
        Series::from_terms(self.spec, self.terms.iter().map(|(x, y)| (x.mul(m), y * c)))
    }

    /// Multiplies by `λ^{2s}`, truncating to the window.
    pub fn shift_l(&self, s: i32) -> Series {
        self.mul_monomial(&Monomial::lambda(s), &Rational::one())
    }

    /// Formal partial derivative `∂/∂t_k`.
    pub fn derive(&self, k: usize) -> Result<Series> {
        if k > self.spec.kmax {
            return Err(Error::IndexOutOfRange { index: k, kmax: self.spec.kmax });
        }
        let mut out = Series::zero(self.spec);
        for (m, c) in &self.terms {
            let e = m.exp(k);
            if e == 0 {
                continue;
            }
            let q = m.div(&Monomial::var(k)).expect("exponent is positive");
            out.add_term(q, c * Rational::from_integer(e.into()));
        }
        Ok(out)
    }

    /// The `n`-th partial derivative in `t_k`.
    pub fn derive_n(&self, k: usize, n: u32) -> Result<Series> {
        let mut s = self.clone();
        for _ in 0..n {
            s = s.derive(k)?;
        }
        if n == 0 && k > self.spec.kmax {
            return Err(Error::IndexOutOfRange { index: k, kmax: self.spec.kmax });
        }
        Ok(s)
    }

    /// Splits into homogeneous t-degree components `0..=dmax`.
    pub fn by_degree(&self) -> Vec<Component> {
        let mut comps = vec![Vec::new(); self.spec.dmax as usize + 1];
        for (m, c) in &self.terms {
            comps[m.deg() as usize].push((m.clone(), c.clone()));
        }
        comps
    }

    fn from_components(spec: TruncationSpec, comps: Vec<Component>) -> Series {
        Series::from_terms(spec, comps.into_iter().flatten())
    }

    /// The exponential `Σ s^n / n!`.
    ///
    /// Computed degree by degree through `d G_d = Σ_k k F_k G_{d-k}`. The t-constant part
    /// of `s` must vanish. The result is exact whenever the λ-window holds every grade
    /// reached by the intermediate products.
    pub fn exp(&self) -> Result<Series> {
        let f = self.by_degree();
        if !f[0].is_empty() {
            return Err(Error::Domain("exp needs a series without t-constant terms".into()));
        }
        let spec = self.spec;
        let mut g: Vec<Component> = vec![vec![(Monomial::one(), Rational::one())]];
        g[0].retain(|(m, _)| spec.admits(m));
        for d in 1..=spec.dmax as usize {
            let jobs: Vec<Job> = (1..=d)
                .map(|k| (Rational::from_integer(k.into()), f[k].as_slice(), vec![g[d - k].as_slice()]))
                .collect();
            let map = product_sum(&jobs, &spec, false);
            let inv_d = Rational::new(1.into(), (d as i64).into());
            g.push(map.into_iter().map(|(m, c)| (m, c * &inv_d)).collect());
        }
        Ok(Series::from_components(spec, g))
    }

    /// The logarithm, for a series whose t-constant part is exactly 1.
    ///
    /// Computed degree by degree through `F_d = U_d - (1/d) Σ_{k<d} k F_k U_{d-k}`.
    pub fn log(&self) -> Result<Series> {
        let u = self.by_degree();
        if u[0] != vec![(Monomial::one(), Rational::one())] {
            return Err(Error::Domain("log needs a series with t-constant part exactly 1".into()));
        }
        let spec = self.spec;
        let mut f: Vec<Component> = vec![Vec::new()];
        for d in 1..=spec.dmax as usize {
            let jobs: Vec<Job> = (1..d)
                .map(|k| (Rational::from_integer(k.into()), f[k].as_slice(), vec![u[d - k].as_slice()]))
                .collect();
            let map = product_sum(&jobs, &spec, false);
            let inv_d = Rational::new(1.into(), (d as i64).into());
            let mut acc: BTreeMap<Monomial, Rational> = u[d].iter().cloned().collect();
            for (m, c) in map {
                accumulate(&mut acc, m, -(c * &inv_d));
            }
            f.push(acc.into_iter().collect());
        }
        Ok(Series::from_components(spec, f))
    }

    /// The multiplicative inverse of a series whose t-constant part is a nonzero rational.
    pub fn invert_unit(&self) -> Result<Series> {
        let u = self.by_degree();
        let c = match u[0].as_slice() {
            [(m, c)] if *m == Monomial::one() => c.clone(),
            [] => return Err(Error::NotAUnit("zero constant term".into())),
            _ => {
                return Err(Error::NotAUnit(
                    "t-constant part carries lambda-dependent terms".into(),
                ))
            }
        };
        let spec = self.spec;
        let inv_c = c.recip();
        let mut r: Vec<Component> = vec![vec![(Monomial::one(), inv_c.clone())]];
        r[0].retain(|(m, _)| spec.admits(m));
        for d in 1..=spec.dmax as usize {
            let jobs: Vec<Job> = (1..=d)
                .map(|k| (-inv_c.clone(), r[d - k].as_slice(), vec![u[k].as_slice()]))
                .collect();
            let map = product_sum(&jobs, &spec, false);
            r.push(map.into_iter().collect());
        }
        Ok(Series::from_components(spec, r))
    }

    /// The power `s^α` for rational `α`, for a series whose t-constant part is exactly 1.
    ///
    /// Uses `c d G_d = Σ_k (α k - (d - k)) U_k G_{d-k}` with `c = 1`.
    pub fn pow_q(&self, alpha: &Rational) -> Result<Series> {
        let u = self.by_degree();
        if u[0] != vec![(Monomial::one(), Rational::one())] {
            return Err(Error::Domain("rational power needs t-constant part exactly 1".into()));
        }
        let spec = self.spec;
        let mut g: Vec<Component> = vec![vec![(Monomial::one(), Rational::one())]];
        g[0].retain(|(m, _)| spec.admits(m));
        for d in 1..=spec.dmax as usize {
            let jobs: Vec<Job> = (1..=d)
                .map(|k| {
                    let w = alpha * Rational::from_integer((k as i64).into())
                        - Rational::from_integer(((d - k) as i64).into());
                    (w, g[d - k].as_slice(), vec![u[k].as_slice()])
                })
                .collect();
            let map = product_sum(&jobs, &spec, false);
            let inv_d = Rational::new(1.into(), (d as i64).into());
            g.push(map.into_iter().map(|(m, c)| (m, c * &inv_d)).collect());
        }
        Ok(Series::from_components(spec, g))
    }

    /// Non-negative integer power.
    pub fn pow(&self, n: u32) -> Series {
        let mut acc = Series::one(self.spec);
        for _ in 0..n {
            acc = &acc * self;
        }
        acc
    }

    /// Substitutes `bindings[k]` for the variable `t_k` of `self`.
    ///
    /// `self` is read as a polynomial in abstract variables; every binding must share one
    /// spec, and the result carries that spec. The λ-grade of each term of `self` is
    /// carried over as a factor `λ^{2ℓ}`.
    pub fn compose(&self, bindings: &[Series]) -> Result<Series> {
        let spec = match bindings.first() {
            Some(b) => b.spec,
            None if self.terms.keys().all(|m| m.deg() == 0) => self.spec,
            None => return Err(Error::UnboundSymbol("t_0".into())),
        };
        for b in bindings {
            if b.spec != spec {
                return Err(Error::SpecMismatch(spec.to_string(), b.spec.to_string()));
            }
        }
        let mut max_exp: Vec<u32> = vec![0; bindings.len()];
        for m in self.terms.keys() {
            for (i, e) in m.sparse() {
                if i >= bindings.len() {
                    return Err(Error::UnboundSymbol(format!("t_{i}")));
                }
                max_exp[i] = max_exp[i].max(e);
            }
        }
        let powers: Vec<Vec<Series>> = par::map_range(bindings.len(), |i| {
            let mut v = vec![Series::one(spec)];
            for e in 1..=max_exp[i] as usize {
                let next = &v[e - 1] * &bindings[i];
                v.push(next);
            }
            v
        });
        let terms: Vec<(&Monomial, &Rational)> = self.terms.iter().collect();
        let parts = par::map(&terms, |(m, c)| {
            let mut acc = Series::monomial(spec, Monomial::lambda(m.l()), (*c).clone());
            for (i, e) in m.sparse() {
                if acc.is_zero() {
                    break;
                }
                acc = &acc * &powers[i][e as usize];
            }
            acc
        });
        let mut out = Series::zero(spec);
        for p in parts {
            for (m, c) in p.terms {
                accumulate(&mut out.terms, m, c);
            }
        }
        Ok(out)
    }
}

/// Adds `c` to the coefficient of `m`, removing the entry if it cancels.
fn accumulate(map: &mut BTreeMap<Monomial, Rational>, m: Monomial, c: Rational) {
    use std::collections::btree_map::Entry;
    match map.entry(m) {
        Entry::Vacant(v) => {
            if !c.is_zero() {
                v.insert(c);
            }
        }
        Entry::Occupied(mut o) => {
            *o.get_mut() += c;
            if o.get().is_zero() {
                o.remove();
            }
        }
    }
}

/// Computes `Σ_jobs coef · A · (B_0 + B_1 + ...)`.
///
/// With `prune` set, `B_d` is taken to be the degree-`d` component and components that
/// would overflow `dmax` are skipped.
fn product_sum(jobs: &[Job], spec: &TruncationSpec, prune: bool) -> BTreeMap<Monomial, Rational> {
    let mut chunks: Vec<(usize, &[(Monomial, Rational)])> = Vec::new();
    let mut work = 0usize;
    for (j, (_, a, b)) in jobs.iter().enumerate() {
        let blen: usize = b.iter().map(|c| c.len()).sum();
        work += a.len() * blen;
        let step = (PAR_THRESHOLD / blen.max(1)).max(1);
        for ch in a.chunks(step) {
            chunks.push((j, ch));
        }
    }
    let run = |&(j, ch): &(usize, &[(Monomial, Rational)])| {
        let (coef, _, b) = &jobs[j];
        let mut acc: HashMap<Monomial, Rational> = HashMap::new();
        for (ma, ca) in ch.iter() {
            let cac = ca * coef;
            let comps: &[&[(Monomial, Rational)]] = if prune {
                let room = spec.dmax.saturating_sub(ma.deg()) as usize;
                &b[..b.len().min(room + 1)]
            } else {
                b
            };
            for comp in comps {
                for (mb, cb) in comp.iter() {
                    let l = ma.l() + mb.l();
                    if l < spec.lmin || l > spec.lmax {
                        continue;
                    }
                    let m = ma.mul(mb);
                    let c = &cac * cb;
                    match acc.get_mut(&m) {
                        Some(x) => *x += c,
                        None => {
                            acc.insert(m, c);
                        }
                    }
                }
            }
        }
        acc
    };
    let partials: Vec<HashMap<Monomial, Rational>> = if work >= PAR_THRESHOLD {
        par::map(&chunks, run)
    } else {
        chunks.iter().map(run).collect()
    };
    let mut out = BTreeMap::new();
    for p in partials {
        for (m, c) in p {
            accumulate(&mut out, m, c);
        }
    }
    out
}

impl fmt::Display for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(m, c)| format!("{}*{}", fmt_rational(c), m))
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

macro_rules! binop {
    ($tr:ident, $method:ident, $checked:ident) => {
        impl $tr<&Series> for &Series {
            type Output = Series;
            /// Panics if the specs differ; use the `checked_` variant to get an error instead.
            fn $method(self, rhs: &Series) -> Series {
                self.$checked(rhs).expect("series operands must share a truncation spec")
            }
        }
        impl $tr<Series> for Series {
            type Output = Series;
            fn $method(self, rhs: Series) -> Series {
                (&self).$method(&rhs)
            }
        }
    };
}

binop!(Add, add, checked_add);
binop!(Sub, sub, checked_sub);
binop!(Mul, mul, checked_mul);

impl Neg for &Series {
    type Output = Series;
    fn neg(self) -> Series {
        self.scale(&-Rational::one())
    }
}

impl Neg for Series {
    type Output = Series;
    fn neg(self) -> Series {
        -&self
    }
}
