//! The I-coordinates, the renormalization map and the identities relating them to `t`.
//!
//! `I_0` is the formal critical point of the action, obtained by Lagrange inversion,
//! and `I_k = Σ_n t_{n+k} I_0^n / n!`. The change of variables `t <-> I` is triangular.
//! Abstract formulas in the `I_k` (or in the derivatives `∂^n I_0 / ∂t_0^n`) are kept as
//! [`FracPoly`] values, polynomials divided by powers of one distinguished series.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Zero};

use crate::combinat::{factorial, factorial_q, frac, partitions};
use crate::error::{Error, Result};
use crate::par;
use crate::partition::{correlator, CorrelatorKey};
use crate::report::{Check, Report};
use crate::series_core::{fmt_rational, Monomial, Rational, Series, TruncationSpec};

/// A finite sum `Σ c · x^μ · D^{-p}` over abstract variables `x_0, x_1, …` and one
/// distinguished denominator `D`.
///
/// In I-coordinate formulas `x_k = I_k` and `D = 1 - I_1`; in derivative formulas
/// `x_n = ∂^n I_0 / ∂t_0^n` and `D = ∂I_0 / ∂t_0`. Negative `p` multiplies by `D`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FracPoly {
    terms: BTreeMap<(Monomial, i32), Rational>,
}

impl FracPoly {
    /// The zero formula.
    pub fn zero() -> Self {
        FracPoly::default()
    }

    /// The constant `c`.
    pub fn constant(c: Rational) -> Self {
        FracPoly::term(Monomial::one(), 0, c)
    }

    /// The single term `c · x^μ · D^{-p}`.
    pub fn term(m: Monomial, p: i32, c: Rational) -> Self {
        let mut f = FracPoly::zero();
        f.add_term(m, p, c);
        f
    }

    /// The variable `x_k`.
    pub fn var(k: usize) -> Self {
        FracPoly::term(Monomial::var(k), 0, Rational::one())
    }

    /// Adds `c · x^μ · D^{-p}` in place.
    pub fn add_term(&mut self, m: Monomial, p: i32, c: Rational) {
        if c.is_zero() {
            return;
        }
        let key = (m, p);
        let v = self.terms.entry(key.clone()).or_insert_with(Rational::zero);
        *v += c;
        if v.is_zero() {
            self.terms.remove(&key);
        }
    }

    /// Iterates over `((μ, p), c)` in canonical order.
    pub fn terms(&self) -> impl Iterator<Item = (&(Monomial, i32), &Rational)> {
        self.terms.iter()
    }

    /// Number of terms.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    /// True when there are no terms.
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Coefficient of `x^μ D^{-p}` with `μ` given as `(index, exponent)` pairs.
    pub fn coeff(&self, pairs: &[(usize, u32)], p: i32) -> Rational {
        self.terms.get(&(Monomial::from_sparse(pairs, 0), p)).cloned().unwrap_or_else(Rational::zero)
    }

    /// Sum.
    pub fn add(&self, other: &FracPoly) -> FracPoly {
        let mut out = self.clone();
        for ((m, p), c) in &other.terms {
            out.add_term(m.clone(), *p, c.clone());
        }
        out
    }

    /// Scalar multiple.
    pub fn scale(&self, c: &Rational) -> FracPoly {
        let mut out = FracPoly::zero();
        for ((m, p), v) in &self.terms {
            out.add_term(m.clone(), *p, v * c);
        }
        out
    }

    /// Product, dropping terms whose variable degree exceeds `max_deg`.
    pub fn mul(&self, other: &FracPoly, max_deg: u32) -> FracPoly {
        let mut out = FracPoly::zero();
        for ((m1, p1), c1) in &self.terms {
            for ((m2, p2), c2) in &other.terms {
                let m = m1.mul(m2);
                if m.deg() <= max_deg {
                    out.add_term(m, p1 + p2, c1 * c2);
                }
            }
        }
        out
    }

    /// `n`-th power with the same degree cap.
    pub fn pow(&self, n: u32, max_deg: u32) -> FracPoly {
        let mut out = FracPoly::constant(Rational::one());
        for _ in 0..n {
            out = out.mul(self, max_deg);
        }
        out
    }

    /// Largest variable degree among the terms.
    pub fn max_degree(&self) -> u32 {
        self.terms.keys().map(|(m, _)| m.deg()).max().unwrap_or(0)
    }

    /// Evaluates with `x_k ↦ vars[k]`, `D ↦ d` and `D^{-1} ↦ d_inv`.
    pub fn eval(&self, vars: &[Series], d: &Series, d_inv: &Series) -> Result<Series> {
        let spec = d.spec();
        let mut max_exp = vec![0u32; vars.len()];
        let (mut pmin, mut pmax) = (0i32, 0i32);
        for (m, p) in self.terms.keys() {
            for (i, e) in m.sparse() {
                if i >= vars.len() {
                    return Err(Error::UnboundSymbol(format!("x_{i}")));
                }
                max_exp[i] = max_exp[i].max(e);
            }
            pmin = pmin.min(*p);
            pmax = pmax.max(*p);
        }
        let var_powers: Vec<Vec<Series>> = par::map_range(vars.len(), |i| power_table(&vars[i], max_exp[i]));
        let inv_powers = power_table(d_inv, pmax.max(0) as u32);
        let d_powers = power_table(d, (-pmin).max(0) as u32);
        let terms: Vec<(&(Monomial, i32), &Rational)> = self.terms.iter().collect();
        let parts = par::map(&terms, |((m, p), c)| {
            let mut acc = if *p >= 0 { inv_powers[*p as usize].clone() } else { d_powers[(-*p) as usize].clone() };
            acc = acc.mul_monomial(&Monomial::lambda(m.l()), c);
            for (i, e) in m.sparse() {
                acc = &acc * &var_powers[i][e as usize];
            }
            acc
        });
        let mut out = Series::zero(spec);
        for p in parts {
            out = &out + &p;
        }
        Ok(out)
    }

    /// Replaces `x_k` by `images[k]` and `D^{-1}` by `d_inv_image`, with a degree cap.
    pub fn substitute(&self, images: &[FracPoly], d_inv_image: &FracPoly, max_deg: u32) -> Result<FracPoly> {
        let mut out = FracPoly::zero();
        for ((m, p), c) in &self.terms {
            if *p < 0 {
                return Err(Error::Domain("substitution needs non-negative denominator powers".into()));
            }
            let mut acc = d_inv_image.pow(*p as u32, max_deg).scale(c);
            for (i, e) in m.sparse() {
                let img = images.get(i).ok_or_else(|| Error::UnboundSymbol(format!("x_{i}")))?;
                acc = acc.mul(&img.pow(e, max_deg), max_deg);
            }
            out = out.add(&acc);
        }
        Ok(out)
    }

    /// Renders with variables named `{var}_k` and the denominator named `den`.
    pub fn render(&self, var: &str, den: &str) -> String {
        if self.terms.is_empty() {
            return "0".into();
        }
        self.terms
            .iter()
            .map(|((m, p), c)| {
                let mono = m
                    .sparse()
                    .iter()
                    .map(|&(i, e)| if e == 1 { format!("{var}_{i}") } else { format!("{var}_{i}^{e}") })
                    .collect::<Vec<_>>()
                    .join("*");
                let mut s = fmt_rational(c);
                if !mono.is_empty() {
                    s = format!("{s}*{mono}");
                }
                if m.l() != 0 {
                    s = format!("{s}*lambda^{{{}}}", 2 * m.l());
                }
                match p.cmp(&0) {
                    std::cmp::Ordering::Greater => format!("{s}/({den})^{p}"),
                    std::cmp::Ordering::Less => format!("{s}*({den})^{}", -p),
                    std::cmp::Ordering::Equal => s,
                }
            })
            .collect::<Vec<_>>()
            .join(" + ")
    }
}

impl fmt::Display for FracPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.render("x", "D"))
    }
}

fn power_table(s: &Series, n: u32) -> Vec<Series> {
    let mut v = vec![Series::one(s.spec())];
    for e in 1..=n as usize {
        let next = &v[e - 1] * s;
        v.push(next);
    }
    v
}

/// `I_0, …, I_K` and `I_{-1}` as series in the couplings.
#[derive(Clone, Debug, PartialEq)]
pub struct ICoordBundle {
    /// `i[k] = I_k` for `0 ≤ k ≤ kmax`.
    pub i: Vec<Series>,
    /// `I_{-1} = Σ_n t_n I_0^{n+1} / (n+1)!`.
    pub iminus1: Series,
    /// The common truncation.
    pub spec: TruncationSpec,
}

impl ICoordBundle {
    /// `I_k`, zero beyond `kmax`.
    pub fn get(&self, k: usize) -> Series {
        self.i.get(k).cloned().unwrap_or_else(|| Series::zero(self.spec))
    }

    /// `1 - I_1`.
    pub fn one_minus_i1(&self) -> Series {
        &Series::one(self.spec) - &self.get(1)
    }

    /// `1 / (1 - I_1)`.
    pub fn inv_one_minus_i1(&self) -> Result<Series> {
        self.one_minus_i1().invert_unit()
    }

    /// Evaluates an I-coordinate formula (`x_k = I_k`, `D = 1 - I_1`).
    pub fn eval(&self, f: &FracPoly) -> Result<Series> {
        f.eval(&self.i, &self.one_minus_i1(), &self.inv_one_minus_i1()?)
    }
}

/// `Σ_{p_1+…+p_k = total} ∏ t_{p_i} / p_i!` over ordered tuples of non-negative parts,
/// optionally skipping every tuple that contains a part equal to 1.
pub fn composition_sum(spec: TruncationSpec, parts: usize, total: usize, skip_one: bool) -> Series {
    let mut out = Series::zero(spec);
    if parts as u32 > spec.dmax {
        return out;
    }
    let nonzero_options: Vec<Vec<usize>> = if total == 0 { vec![vec![]] } else { partitions(total, spec.kmax) };
    for p in nonzero_options {
        if p.len() > parts || (skip_one && p.contains(&1)) {
            continue;
        }
        let mut mult = vec![0u32; spec.kmax + 1];
        mult[0] = (parts - p.len()) as u32;
        for &x in &p {
            mult[x] += 1;
        }
        let mut c = factorial_q(parts as u64);
        for (j, &m) in mult.iter().enumerate() {
            c /= factorial_q(m as u64) * factorial_q(j as u64).pow(m as i32);
        }
        let pairs: Vec<(usize, u32)> = mult.iter().enumerate().filter(|(_, &m)| m > 0).map(|(j, &m)| (j, m)).collect();
        out.add_term(Monomial::from_sparse(&pairs, 0), c);
    }
    out
}

/// `I_0 = Σ_k (1/k) Σ_{p_1+…+p_k = k-1} ∏ t_{p_i} / p_i!` from Lagrange inversion.
pub fn i0_lagrange(spec: TruncationSpec) -> Series {
    let ks: Vec<usize> = (1..=spec.dmax as usize).collect();
    let parts = par::map(&ks, |&k| composition_sum(spec, k, k - 1, false).scale(&frac(1, k as i64)));
    parts.iter().fold(Series::zero(spec), |acc, p| &acc + p)
}

/// `Σ_{n ≥ 0} t_{n+shift} X^{n+extra} / (n+extra)!` for a series `X` without constant term.
fn taylor_shift(spec: TruncationSpec, x_powers: &[Series], shift: usize, extra: usize) -> Result<Series> {
    let mut out = Series::zero(spec);
    for n in 0.. {
        let idx = n + shift;
        let e = n + extra;
        if idx > spec.kmax || e >= x_powers.len() {
            break;
        }
        let t = Series::var(spec, idx)?;
        out = &out + &(&t * &x_powers[e]).scale(&(Rational::one() / factorial_q(e as u64)));
    }
    Ok(out)
}

/// Computes the I-coordinates for `spec`, whose λ-window must contain 0.
pub fn compute_i(spec: TruncationSpec) -> Result<ICoordBundle> {
    if spec.lmin > 0 || spec.lmax < 0 {
        return Err(Error::Domain(format!("I-coordinates need lambda grade 0 in the window of {spec}")));
    }
    let i0 = i0_lagrange(spec);
    let powers = power_table(&i0, spec.dmax + 1);
    let ks: Vec<usize> = (1..=spec.kmax).collect();
    let higher = par::map(&ks, |&k| taylor_shift(spec, &powers, k, 0));
    let mut i = vec![i0];
    for h in higher {
        i.push(h?);
    }
    let iminus1 = taylor_shift(spec, &powers, 0, 1)?;
    Ok(ICoordBundle { i, iminus1, spec })
}

/// `t_k = Σ_n (-1)^n I_0^n / n! · I_{n+k}` for `0 ≤ k ≤ kmax`, as formulas in the `I_k`.
pub fn t_in_i(kmax: usize, dmax: u32) -> Vec<FracPoly> {
    (0..=kmax)
        .map(|k| {
            let mut f = FracPoly::zero();
            for n in 0..=(kmax - k) {
                if n as u32 + 1 > dmax.max(1) {
                    break;
                }
                let sign = if n % 2 == 0 { Rational::one() } else { -Rational::one() };
                let m = Monomial::from_sparse(&[(0, n as u32), (n + k, 1)], 0);
                f.add_term(m, 0, sign / factorial_q(n as u64));
            }
            f
        })
        .collect()
}

/// Substitutes the computed `I_k` into [`t_in_i`].
pub fn t_from_i(bundle: &ICoordBundle) -> Result<Vec<Series>> {
    t_in_i(bundle.spec.kmax, bundle.spec.dmax).iter().map(|f| bundle.eval(f)).collect()
}

/// Checks that `t -> I -> t` is the identity, plus triangularity of every `I_k`.
pub fn roundtrip_report(bundle: &ICoordBundle) -> Result<Report> {
    let mut r = Report::new();
    for (k, tk) in t_from_i(bundle)?.iter().enumerate() {
        let id = Series::var(bundle.spec, k)?;
        r.series(format!("t_{k} round trip"), &(tk - &id));
    }
    for (k, ik) in bundle.i.iter().enumerate() {
        let linear = ik.retain(|m, _| m.deg() <= 1);
        r.series(format!("I_{k} triangular"), &(&linear - &Series::var(bundle.spec, k)?));
    }
    Ok(r)
}

/// `S(I_0) = Σ_k (-1)^k / (k+1)! · (I_k + δ_{k,1}) I_0^{k+1}` as an I-formula.
pub fn s_at_critical_formula(kmax: usize, dmax: u32) -> FracPoly {
    let mut f = FracPoly::zero();
    for k in 0..=kmax {
        if k as u32 + 2 > dmax {
            break;
        }
        let sign = if k % 2 == 0 { Rational::one() } else { -Rational::one() };
        let c = sign / factorial_q(k as u64 + 1);
        f.add_term(Monomial::from_sparse(&[(0, k as u32 + 1), (k, 1)], 0), 0, c.clone());
        if k == 1 {
            f.add_term(Monomial::from_sparse(&[(0, 2)], 0), 0, c);
        }
    }
    f
}

/// A point on the renormalization orbit: the running constant `t̂_{-1}`, the couplings
/// `t̂_0, …, t̂_K`, and the accumulated Newton position `x_n`.
#[derive(Clone, Debug, PartialEq)]
pub struct RenormState {
    /// `t̂_{-1}`.
    pub tminus1: Series,
    /// `t̂_k` for `0 ≤ k ≤ kmax`.
    pub couplings: Vec<Series>,
    /// Sum of the Newton steps taken so far.
    pub position: Series,
}

impl RenormState {
    /// The starting point `(0, t_0, t_1, …)` at position 0.
    pub fn initial(spec: TruncationSpec) -> Result<Self> {
        let couplings = (0..=spec.kmax).map(|k| Series::var(spec, k)).collect::<Result<Vec<_>>>()?;
        Ok(RenormState { tminus1: Series::zero(spec), couplings, position: Series::zero(spec) })
    }

    /// The Taylor coefficients of the action at the current point:
    /// `(t̂_{-1}, t̂_0, t̂_1 - 1, t̂_2, …)`.
    pub fn taylor_slots(&self) -> Vec<Series> {
        let spec = self.tminus1.spec();
        let mut v = vec![self.tminus1.clone()];
        for (k, c) in self.couplings.iter().enumerate() {
            v.push(if k == 1 { c - &Series::one(spec) } else { c.clone() });
        }
        v
    }
}

/// One completing-the-square step at the Newton point `x_1 = t̂_0 / (1 - t̂_1)`.
pub fn renorm_step(state: &RenormState) -> Result<RenormState> {
    let spec = state.tminus1.spec();
    let kmax = state.couplings.len() - 1;
    let t = |k: usize| state.couplings.get(k).cloned().unwrap_or_else(|| Series::zero(spec));
    let one_minus = &Series::one(spec) - &t(1);
    let inv = one_minus.invert_unit().map_err(|_| Error::NotAUnit("1 - t_1".into()))?;
    let x1 = &t(0) * &inv;
    let xp = power_table(&x1, spec.dmax + 1);
    let weighted = |k: usize, n: usize| (&t(k) * &xp[n]).scale(&(Rational::one() / factorial_q(n as u64)));
    let mut tminus1 = &state.tminus1 + &(&(&t(0) * &t(0)) * &inv).scale(&frac(1, 2));
    for n in 3..xp.len() {
        if n - 1 > kmax {
            break;
        }
        tminus1 = &tminus1 + &weighted(n - 1, n);
    }
    let mut couplings = Vec::with_capacity(kmax + 1);
    let mut t0 = Series::zero(spec);
    for n in 2..xp.len().min(kmax + 1) {
        t0 = &t0 + &weighted(n, n);
    }
    couplings.push(t0);
    for m in 1..=kmax {
        let mut s = Series::zero(spec);
        for n in 0..xp.len() {
            if n + m > kmax {
                break;
            }
            s = &s + &weighted(n + m, n);
        }
        couplings.push(s);
    }
    Ok(RenormState { tminus1, couplings, position: &state.position + &x1 })
}

/// Iterates [`renorm_step`] from the initial point until `t̂_0` vanishes in the
/// truncation; returns the limit and the number of steps taken.
pub fn renorm_limit(spec: TruncationSpec) -> Result<(RenormState, usize)> {
    let mut state = RenormState::initial(spec)?;
    for steps in 0..=(spec.dmax as usize + 1) {
        if state.couplings[0].is_zero() {
            return Ok((state, steps));
        }
        state = renorm_step(&state)?;
    }
    Err(Error::Domain("renormalization did not reach t_0 = 0 within the step bound".into()))
}

/// Compares the renormalization limit with `(I_{-1} - ½ I_0², 0, I_1, I_2, …)`, with
/// the closed `S(I_0)` formula and with the Newton position `I_0`.
pub fn renorm_report(bundle: &ICoordBundle) -> Result<Report> {
    let spec = bundle.spec;
    let (lim, steps) = renorm_limit(spec)?;
    let mut r = Report::new();
    r.push(Check::flag("step bound", steps as u32 <= spec.dmax + 1, format!("{steps} steps")));
    let half_sq = (&bundle.i[0] * &bundle.i[0]).scale(&frac(1, 2));
    r.series("t_-1 limit", &(&lim.tminus1 - &(&bundle.iminus1 - &half_sq)));
    r.series("S(I_0) closed form", &(&lim.tminus1 - &bundle.eval(&s_at_critical_formula(spec.kmax, spec.dmax))?));
    r.series("Newton position", &(&lim.position - &bundle.i[0]));
    for (k, c) in lim.couplings.iter().enumerate() {
        let target = if k == 0 { Series::zero(spec) } else { bundle.get(k) };
        r.series(format!("t_{k} limit"), &(c - &target));
    }
    Ok(r)
}

/// Power-series coefficients `a_1, …, a_mmax` of the gradient flow
/// `x'(s) = -x + Σ t_n x^n / n!` with `x(0) = 0`.
pub fn gradient_flow_coeffs(spec: TruncationSpec, mmax: usize) -> Result<Vec<Series>> {
    if mmax == 0 {
        return Err(Error::Domain("mmax must be at least 1".into()));
    }
    let mut a: Vec<Series> = vec![Series::zero(spec), Series::var(spec, 0)?];
    for m in 1..mmax {
        let mut rhs = -&a[m];
        for p in partitions(m, m) {
            let mut mult = vec![0u32; m + 1];
            for &x in &p {
                mult[x] += 1;
            }
            let index: u32 = mult.iter().sum();
            if index as usize > spec.kmax {
                continue;
            }
            let mut term = Series::var(spec, index as usize)?;
            for (j, &k) in mult.iter().enumerate() {
                if k > 0 {
                    term = (&term * &a[j].pow(k)).scale(&(Rational::one() / factorial_q(k as u64)));
                }
            }
            rhs = &rhs + &term;
        }
        a.push(rhs.scale(&frac(1, m as i64 + 1)));
    }
    a.remove(0);
    Ok(a)
}

/// `∂t_k / ∂I_l` from the inverse Jacobian: `δ_{k,0} - t_{k+1}` for `l = 0` and
/// `(-I_0)^{l-k} / (l-k)!` for `l ≥ max(k, 1)`.
pub fn dt_di(bundle: &ICoordBundle, k: usize, l: usize) -> Result<Series> {
    let spec = bundle.spec;
    if l == 0 {
        let mut s = if k == 0 { Series::one(spec) } else { Series::zero(spec) };
        if k < spec.kmax {
            s = &s - &Series::var(spec, k + 1)?;
        }
        return Ok(s);
    }
    if l < k {
        return Ok(Series::zero(spec));
    }
    let d = (l - k) as u32;
    let sign = if d % 2 == 0 { Rational::one() } else { -Rational::one() };
    Ok(bundle.i[0].pow(d).scale(&(sign / factorial_q(d as u64))))
}

/// `A_1 = 1`, `A_j = -(I_0 A_{j-1} + I_0²/2! A_{j-2} + … + I_0^{j-1}/(j-1)! A_1)`.
pub fn a_minors(bundle: &ICoordBundle, jmax: usize) -> Vec<Series> {
    let spec = bundle.spec;
    let p = power_table(&bundle.i[0], jmax as u32);
    let mut a = vec![Series::zero(spec), Series::one(spec)];
    for j in 2..=jmax {
        let mut s = Series::zero(spec);
        for i in 1..j {
            s = &s + &(&p[i] * &a[j - i]).scale(&(Rational::one() / factorial_q(i as u64)));
        }
        a.push(-&s);
    }
    a
}

/// Determinant of a square matrix of series by Laplace expansion along the first row.
pub fn laplace_det(m: &[Vec<Series>], spec: TruncationSpec) -> Series {
    let n = m.len();
    if n == 0 {
        return Series::one(spec);
    }
    let mut out = Series::zero(spec);
    for (j, entry) in m[0].iter().enumerate() {
        if entry.is_zero() {
            continue;
        }
        let minor: Vec<Vec<Series>> = m[1..]
            .iter()
            .map(|row| row.iter().enumerate().filter(|(c, _)| *c != j).map(|(_, s)| s.clone()).collect())
            .collect();
        let term = entry * &laplace_det(&minor, spec);
        out = if j % 2 == 0 { &out + &term } else { &out - &term };
    }
    out
}

/// Verifies the Jacobian identities between `t` and `I` as truncated series.
///
/// The determinant is expanded generically only when `kmax ≤ 5`.
pub fn jacobian_identities(bundle: &ICoordBundle) -> Result<Report> {
    let spec = bundle.spec;
    let kmax = spec.kmax;
    let top = spec.dmax.saturating_sub(1);
    let inv = bundle.inv_one_minus_i1()?;
    let i0p = power_table(&bundle.i[0], kmax as u32);
    let mut r = Report::new();
    for k in 0..=kmax {
        let d = bundle.i[0].derive(k)?;
        let lhs = (&bundle.one_minus_i1() * &d).scale(&Rational::from_integer(factorial(k as u64)));
        r.series(format!("dI_0/dt_{k}"), &(&lhs - &i0p[k]).up_to_degree(top));
    }
    for l in 1..=kmax {
        for k in 0..=kmax {
            let d = bundle.i[l].derive(k)?;
            let mut rhs = (&(&bundle.get(l + 1) * &i0p[k]) * &inv).scale(&(Rational::one() / factorial_q(k as u64)));
            if k >= l {
                rhs = &rhs + &i0p[k - l].scale(&(Rational::one() / factorial_q((k - l) as u64)));
            }
            r.series(format!("dI_{l}/dt_{k}"), &(&d - &rhs).up_to_degree(top));
        }
    }
    let dt: Vec<Vec<Series>> =
        (0..=kmax).map(|k| (0..=kmax).map(|l| dt_di(bundle, k, l)).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?;
    let di: Vec<Vec<Series>> = (0..=kmax)
        .map(|l| (0..=kmax).map(|j| bundle.i[l].derive(j)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    for k in 0..=kmax {
        for j in 0..=kmax {
            let mut s = Series::zero(spec);
            for l in 0..=kmax {
                s = &s + &(&dt[k][l] * &di[l][j]);
            }
            if k == j {
                s = &s - &Series::one(spec);
            }
            r.series(format!("chain rule ({k},{j})"), &s.up_to_degree(top));
        }
    }
    let a = a_minors(bundle, kmax + 1);
    for (j, aj) in a.iter().enumerate().skip(1) {
        let sign = if (j - 1) % 2 == 0 { Rational::one() } else { -Rational::one() };
        let closed = bundle.i[0].pow(j as u32 - 1).scale(&(sign / factorial_q(j as u64 - 1)));
        r.series(format!("A_{j} closed form"), &(aj - &closed));
    }
    let mut det = if kmax == 0 { Series::one(spec) } else { &Series::one(spec) - &Series::var(spec, 1)? };
    for j in 2..=kmax {
        let t = Series::var(spec, j)?;
        let term = &t * &a[j];
        det = if j % 2 == 0 { &det + &term } else { &det - &term };
    }
    r.series("determinant expansion", &(&det - &bundle.one_minus_i1()));
    if kmax <= 5 {
        let rows: Vec<Vec<Series>> = (0..=kmax).map(|l| (0..=kmax).map(|k| dt[k][l].clone()).collect()).collect();
        r.series("determinant by Laplace", &(&laplace_det(&rows, spec) - &bundle.one_minus_i1()));
    }
    Ok(r)
}

fn mult_vector(p: &[usize], len: usize) -> Vec<u32> {
    let mut mult = vec![0u32; len];
    for &x in p {
        mult[x] += 1;
    }
    mult
}

/// Coefficient `(Σ (j+1) m_j)! / ∏ ((j+1)!^{m_j} m_j!)` and weight `Σ (j+1) m_j`.
fn derivative_coefficient(mult: &[u32]) -> (Rational, u32) {
    let weight: u32 = mult.iter().enumerate().map(|(j, &m)| (j as u32 + 1) * m).sum();
    let mut c = factorial_q(weight as u64);
    for (j, &m) in mult.iter().enumerate().skip(1) {
        c /= factorial_q(j as u64 + 1).pow(m as i32) * factorial_q(m as u64);
    }
    (c, weight)
}

/// `∂^n I_0 / ∂t_0^n` as an I-formula, `n ≥ 1`:
/// `Σ_{Σ j m_j = n-1} (Σ(j+1)m_j)! / ∏((j+1)!^{m_j} m_j!) · ∏ I_{j+1}^{m_j} / (1-I_1)^{Σ(j+1)m_j + 1}`.
pub fn d_i0_in_i(n: usize) -> FracPoly {
    let mut f = FracPoly::zero();
    if n == 0 {
        return FracPoly::var(0);
    }
    let parts = if n == 1 { vec![vec![]] } else { partitions(n - 1, n - 1) };
    for p in parts {
        let mult = mult_vector(&p, n);
        let (c, weight) = derivative_coefficient(&mult);
        let pairs: Vec<(usize, u32)> = mult.iter().enumerate().filter(|(_, &m)| m > 0).map(|(j, &m)| (j + 1, m)).collect();
        f.add_term(Monomial::from_sparse(&pairs, 0), weight as i32 + 1, c);
    }
    f
}

/// `I_n` for `n ≥ 2` in terms of `d_j = ∂^j I_0 / ∂t_0^j` (denominator `d_1`):
/// `-Σ_{Σ j m_j = n-1} (Σ(j+1)m_j)! / ∏((j+1)!^{m_j} m_j!) · ∏ (-d_{j+1})^{m_j} / d_1^{Σ(j+1)m_j + 1}`.
///
/// For `n = 1` the same sum gives `I_1 - 1`; that case is returned as `1 - 1/d_1`.
pub fn i_in_d(n: usize) -> FracPoly {
    if n == 0 {
        return FracPoly::var(0);
    }
    if n == 1 {
        return FracPoly::constant(Rational::one()).add(&FracPoly::term(Monomial::one(), 1, -Rational::one()));
    }
    let mut f = FracPoly::zero();
    for p in partitions(n - 1, n - 1) {
        let mult = mult_vector(&p, n);
        let (c, weight) = derivative_coefficient(&mult);
        let count: u32 = mult.iter().sum();
        let sign = if (count + 1) % 2 == 0 { Rational::one() } else { -Rational::one() };
        let pairs: Vec<(usize, u32)> = mult.iter().enumerate().filter(|(_, &m)| m > 0).map(|(j, &m)| (j + 1, m)).collect();
        f.add_term(Monomial::from_sparse(&pairs, 0), weight as i32 + 1, sign * c);
    }
    f
}

/// `∂^l I_0 / ∂t_0^l = Σ_{k ≥ 0} (k+1)…(k+l-1) Σ_{p_1+…+p_k = k+l-1} ∏ t_{p_i}/p_i!`, `l ≥ 1`.
///
/// The `k = 0` term is the empty composition and contributes only for `l = 1`.
pub fn d_i0_composition(spec: TruncationSpec, l: usize) -> Series {
    let mut out = if l == 1 { Series::one(spec) } else { Series::zero(spec) };
    for k in 1..=spec.dmax as usize {
        let rising: BigInt = (1..l).map(|i| BigInt::from(k + i)).product();
        out = &out + &composition_sum(spec, k, k + l - 1, false).scale(&Rational::from_integer(rising));
    }
    out
}

/// `d_n = ∂^n I_0 / ∂t_0^n` for `0 ≤ n ≤ nmax` by repeated differentiation.
pub fn derivatives_of_i0(bundle: &ICoordBundle, nmax: usize) -> Result<Vec<Series>> {
    let mut d = vec![bundle.i[0].clone()];
    for n in 1..=nmax {
        let next = d[n - 1].derive(0)?;
        d.push(next);
    }
    Ok(d)
}

/// Evaluates a derivative formula (`x_n = d_n`, `D = d_1`).
pub fn eval_in_derivatives(f: &FracPoly, d: &[Series]) -> Result<Series> {
    let inv = d[1].invert_unit()?;
    f.eval(d, &d[1], &inv)
}

/// Checks both directions of the duality between `∂^n I_0 / ∂t_0^n` and `I_n`, and
/// the composition-sum form of the derivatives, for `1 ≤ n ≤ nmax`.
pub fn d_i0_duality(bundle: &ICoordBundle, nmax: usize) -> Result<Report> {
    let spec = bundle.spec;
    if nmax as u32 > spec.dmax {
        return Err(Error::Domain(format!("nmax {nmax} exceeds dmax {}", spec.dmax)));
    }
    let d = derivatives_of_i0(bundle, nmax)?;
    let mut r = Report::new();
    for n in 1..=nmax {
        let top = spec.dmax - n as u32;
        let formula = bundle.eval(&d_i0_in_i(n))?;
        r.series(format!("d^{n} I_0 in I"), &(&formula - &d[n]).up_to_degree(top));
        r.series(format!("d^{n} I_0 composition sum"), &(&d_i0_composition(spec, n) - &d[n]).up_to_degree(top));
        if n <= spec.kmax {
            let inv = eval_in_derivatives(&i_in_d(n), &d)?;
            r.series(format!("I_{n} in derivatives"), &(&inv - &bundle.i[n]).up_to_degree(top));
        }
    }
    Ok(r)
}

/// `F_g` written in I-coordinates: `poly + log_coeff · log 1/(1 - I_1)`, scaled so that
/// its value is the `λ^{2g-2}` coefficient of `F`.
#[derive(Clone, Debug, PartialEq)]
pub struct FgInI {
    /// Genus.
    pub genus: u32,
    /// The rational part in `I_k` and `1/(1 - I_1)`.
    pub poly: FracPoly,
    /// Coefficient of `log 1/(1 - I_1)`.
    pub log_coeff: Rational,
}

impl FgInI {
    /// Evaluates on a bundle.
    pub fn eval(&self, bundle: &ICoordBundle) -> Result<Series> {
        let mut s = bundle.eval(&self.poly)?;
        if !self.log_coeff.is_zero() {
            let lg = -bundle.one_minus_i1().log()?;
            s = &s + &lg.scale(&self.log_coeff);
        }
        Ok(s)
    }
}

impl fmt::Display for FgInI {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let body = self.poly.render("I", "1-I_1");
        if self.log_coeff.is_zero() {
            write!(f, "F_{} = {}", self.genus, body)
        } else if self.poly.is_zero() {
            write!(f, "F_{} = {}*log(1/(1-I_1))", self.genus, fmt_rational(&self.log_coeff))
        } else {
            write!(f, "F_{} = {}*log(1/(1-I_1)) + {}", self.genus, fmt_rational(&self.log_coeff), body)
        }
    }
}

/// `F_g` in I-coordinates.
///
/// Genus 0 uses `S(I_0)`, genus 1 is `½ log 1/(1-I_1)`, and for `g ≥ 2`
/// `F_g = Σ ⟨∏ τ_{j-1}^{m_j}⟩_g ∏ (I_{j-1} / (1-I_1)^{j/2})^{m_j} / m_j!` over
/// `Σ m_j (j-2) = 2g-2`, with correlators read from `f`. Profiles using an index above
/// `f`'s `kmax` are omitted; they vanish once `t_j = 0` for `j > kmax`.
pub fn f_in_i(g: u32, f: &Series) -> Result<FgInI> {
    let spec = f.spec();
    match g {
        0 => Ok(FgInI { genus: 0, poly: s_at_critical_formula(spec.kmax, spec.dmax), log_coeff: Rational::zero() }),
        1 => Ok(FgInI { genus: 1, poly: FracPoly::zero(), log_coeff: frac(1, 2) }),
        _ => {
            let mut poly = FracPoly::zero();
            let total = 2 * g as usize - 2;
            for p in partitions(total, total) {
                if p.iter().any(|&s| s + 1 > spec.kmax) {
                    continue;
                }
                let indices: Vec<usize> = p.iter().map(|&s| s + 1).collect();
                let key = CorrelatorKey::new(indices.clone(), g);
                let value = correlator(&key, f)?;
                let mono = Monomial::from_indices(&indices, 0);
                let mut c = value;
                for (_, e) in mono.sparse() {
                    c /= factorial_q(e as u64);
                }
                poly.add_term(mono, g as i32 - 1 + p.len() as i32, c);
            }
            Ok(FgInI { genus: g, poly, log_coeff: Rational::zero() })
        }
    }
}

/// `F_g`-in-I evaluated on `bundle` minus the `λ^{2g-2}` slice of `f`.
pub fn f_in_i_residual(g: u32, f: &Series, bundle: &ICoordBundle) -> Result<Series> {
    let fg = f_in_i(g, f)?;
    let value = fg.eval(bundle)?;
    let slice = f.slice_l(g as i32 - 1).shift_l(1 - g as i32).retruncate(bundle.spec);
    Ok(&value - &slice)
}

/// Rewrites `F_g` (`g ≥ 2`) in the derivatives `d_n = ∂^n I_0/∂t_0^n` by substituting
/// the inverse formulas for `I_n` and `1/(1-I_1) = d_1`.
pub fn f_in_derivatives(fg: &FgInI) -> Result<FracPoly> {
    if !fg.log_coeff.is_zero() {
        return Err(Error::Domain("the logarithmic genus-one term has no derivative form".into()));
    }
    let maxdeg = fg.poly.max_degree() * 4 + 4;
    let nmax = fg.poly.terms().flat_map(|((m, _), _)| m.max_index()).max().unwrap_or(0);
    let images: Vec<FracPoly> = (0..=nmax).map(i_in_d).collect();
    let d1 = FracPoly::term(Monomial::one(), -1, Rational::one());
    fg.poly.substitute(&images, &d1, maxdeg)
}

/// Genus-zero formulas in `t`-coordinates, returned at grade `ℓ = -1`:
/// `F_0 = Σ_k 1/(k(k+1)) Σ_{p_1+…+p_{k+1} = k-1} ∏ t_{p_i}/p_i!` and its variant with the
/// `t_1` insertions resummed into `(1 - t_1)^{-k}`.
pub fn f0_explicit(spec: TruncationSpec) -> Result<(Series, Series)> {
    let mut plain = Series::zero(spec);
    let mut resummed = Series::zero(spec);
    let base = &Series::one(spec) - &Series::var(spec, 1.min(spec.kmax))?;
    let inv = base.invert_unit()?;
    let inv_powers = power_table(&inv, spec.dmax);
    for k in 1..spec.dmax as usize {
        let c = frac(1, (k * (k + 1)) as i64);
        plain = &plain + &composition_sum(spec, k + 1, k - 1, false).scale(&c);
        let inner = composition_sum(spec, k + 1, k - 1, true).scale(&c);
        resummed = &resummed + &(&inner * &inv_powers[k]);
    }
    Ok((plain.shift_l(-1), resummed.shift_l(-1)))
}

/// `∂F_0/∂t_0 = Σ_k 1/(k (1-t_1)^k) Σ_{p_1+…+p_k = k-1, p_j ≠ 1} ∏ t_{p_i}/p_i!`, at grade 0.
pub fn pd_f0_resummed(spec: TruncationSpec) -> Result<Series> {
    let base = &Series::one(spec) - &Series::var(spec, 1.min(spec.kmax))?;
    let inv = base.invert_unit()?;
    let inv_powers = power_table(&inv, spec.dmax);
    let mut out = Series::zero(spec);
    for k in 1..=spec.dmax as usize {
        let inner = composition_sum(spec, k, k - 1, true).scale(&frac(1, k as i64));
        out = &out + &(&inner * &inv_powers[k]);
    }
    Ok(out)
}

/// `∂^{l+1} F_0/∂t_0^{l+1} = Σ_k (k+1)…(k+l-1)/(1-t_1)^{k+l} Σ_{p_1+…+p_k = k+l-1, p_j ≠ 1} ∏ t_{p_i}/p_i!`
/// for `l ≥ 1`, at grade 0.
pub fn higher_pd_f0_resummed(spec: TruncationSpec, l: usize) -> Result<Series> {
    if l == 0 {
        return pd_f0_resummed(spec);
    }
    let base = &Series::one(spec) - &Series::var(spec, 1.min(spec.kmax))?;
    let inv = base.invert_unit()?;
    let inv_powers = power_table(&inv, spec.dmax + l as u32);
    let mut out = if l == 1 { inv.clone() } else { Series::zero(spec) };
    for k in 1..=spec.dmax as usize {
        let rising: BigInt = (1..l).map(|i| BigInt::from(k + i)).product();
        let inner = composition_sum(spec, k, k + l - 1, true).scale(&Rational::from_integer(rising));
        if inner.is_zero() {
            continue;
        }
        out = &out + &(&inner * &inv_powers[k + l]);
    }
    Ok(out)
}
