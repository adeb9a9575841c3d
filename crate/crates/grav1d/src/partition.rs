//! Partition function, free energy, correlators and restricted closed forms.
//!
//! `Z` is the formal Gaussian moment expansion
//! `Z = Σ (2n-1)!! / ∏ ((j!)^{m_j} m_j!) · λ^{2n - 2Σ m_j} ∏ t_{j-1}^{m_j}` over
//! multiplicities with `Σ j m_j = 2n`, and `F = log Z`.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Zero};

use crate::combinat::{double_factorial, exponent_vectors, factorial, frac, q};
use crate::error::{Error, Result};
use crate::par;
use crate::series_core::{Monomial, Rational, Series, TruncationSpec};

/// Coefficient and λ-grade of the `Z` term with dense exponent vector `exps`.
///
/// Returns `None` when the total valence `Σ (a+1) e_a` is odd, in which case the
/// Gaussian moment vanishes.
pub fn z_coefficient(exps: &[u16]) -> Option<(i32, Rational)> {
    let mut valence = 0u64;
    let mut vertices = 0i64;
    let mut denom = BigInt::one();
    for (a, &m) in exps.iter().enumerate() {
        if m == 0 {
            continue;
        }
        let j = a as u64 + 1;
        valence += j * m as u64;
        vertices += m as i64;
        denom *= factorial(j).pow(m as u32) * factorial(m as u64);
    }
    if valence % 2 == 1 {
        return None;
    }
    let n = (valence / 2) as i64;
    let l = (n - vertices) as i32;
    Some((l, Rational::new(double_factorial(2 * n - 1), denom)))
}

/// The `Z` term for the given exponent vector, if it is nonzero.
pub fn z_term(exps: &[u16]) -> Option<(Monomial, Rational)> {
    z_coefficient(exps).map(|(l, c)| (Monomial::from_dense(exps, l), c))
}

/// Closed-form `Z` on the couplings in `vars`, every other coupling set to zero.
///
/// Fails with a window-overflow error if some generated term has its λ-grade outside
/// the window of `spec`.
pub fn closed_form_z_on(spec: TruncationSpec, vars: &[usize]) -> Result<Series> {
    for &v in vars {
        if v > spec.kmax {
            return Err(Error::IndexOutOfRange { index: v, kmax: spec.kmax });
        }
    }
    let vectors = exponent_vectors(vars.len(), spec.dmax);
    let terms = par::map(&vectors, |v| {
        let mut dense = vec![0u16; spec.kmax + 1];
        for (slot, &e) in v.iter().enumerate() {
            dense[vars[slot]] = e;
        }
        z_term(&dense)
    });
    let mut out = Series::zero(spec);
    for (m, c) in terms.into_iter().flatten() {
        if m.l() < spec.lmin || m.l() > spec.lmax {
            return Err(Error::WindowOverflow(m.to_string()));
        }
        out.add_term(m, c);
    }
    Ok(out)
}

/// Closed-form `Z` truncated to `spec`.
pub fn closed_form_z(spec: TruncationSpec) -> Result<Series> {
    let vars: Vec<usize> = (0..=spec.kmax).collect();
    closed_form_z_on(spec, &vars)
}

/// The spec used for edge-bounded series: `dmax = 2 emax` and `ℓ ∈ [-emax, emax - 1]`.
pub fn edge_spec(kmax: usize, emax: u32) -> TruncationSpec {
    TruncationSpec { kmax, dmax: 2 * emax, lmin: -(emax as i32), lmax: emax as i32 - 1 }
}

/// Number of edges `Σ (a_j + 1) / 2` of the diagrams behind a monomial.
pub fn edge_count(m: &Monomial) -> u32 {
    m.valence_sum() / 2
}

/// Closed-form `Z` over all terms with at most `emax` edges and indices up to `kmax`.
///
/// The edge count is additive under products, so this truncation is compatible with
/// `exp` and `log`.
pub fn closed_form_z_edges(kmax: usize, emax: u32) -> Series {
    let spec = edge_spec(kmax, emax);
    let mut out = Series::zero(spec);
    for total in 0..=(2 * emax as usize) {
        for parts in crate::combinat::partitions(total, kmax + 1) {
            let mut dense = vec![0u16; kmax + 1];
            for p in parts {
                dense[p - 1] += 1;
            }
            if let Some((m, c)) = z_term(&dense) {
                out.add_term(m, c);
            }
        }
    }
    out
}

/// Keeps the terms with at most `emax` edges.
pub fn truncate_edges(s: &Series, emax: u32) -> Series {
    s.retain(|m, _| edge_count(m) <= emax)
}

/// `F = log Z`; the grade-`ℓ` part is `λ^{2ℓ} F_{ℓ+1}`.
pub fn free_energy(z: &Series) -> Result<Series> {
    z.log()
}

/// `F` computed from the closed-form `Z` on the full window for `(kmax, dmax)`.
pub fn free_energy_full(kmax: usize, dmax: u32) -> Result<Series> {
    free_energy(&closed_form_z(TruncationSpec::z_window(kmax, dmax))?)
}

/// A correlator `⟨τ_{a_1} … τ_{a_n}⟩_g`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CorrelatorKey {
    /// Sorted insertion indices.
    pub indices: Vec<usize>,
    /// Genus.
    pub genus: u32,
}

impl CorrelatorKey {
    /// Builds a key, sorting the indices.
    pub fn new(mut indices: Vec<usize>, genus: u32) -> Self {
        indices.sort_unstable();
        CorrelatorKey { indices, genus }
    }

    /// Builds a key from `(index, multiplicity)` pairs.
    pub fn from_powers(powers: &[(usize, usize)], genus: u32) -> Self {
        let idx = powers.iter().flat_map(|&(i, m)| std::iter::repeat(i).take(m)).collect();
        CorrelatorKey::new(idx, genus)
    }

    /// The selection rule `Σ a_j = 2g - 2 + n`.
    pub fn admissible(&self) -> bool {
        let sum: i64 = self.indices.iter().map(|&a| a as i64).sum();
        sum == 2 * self.genus as i64 - 2 + self.indices.len() as i64
    }

    /// The monomial `λ^{2g-2} ∏ t_{a_j}` carrying this correlator in `F`.
    pub fn monomial(&self) -> Monomial {
        Monomial::from_indices(&self.indices, self.genus as i32 - 1)
    }

    /// `∏` of multiplicity factorials.
    pub fn symmetry_factor(&self) -> BigInt {
        let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
        for &i in &self.indices {
            *counts.entry(i).or_default() += 1;
        }
        counts.values().map(|&m| factorial(m)).product()
    }
}

impl fmt::Display for CorrelatorKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = Monomial::from_indices(&self.indices, 0);
        let body = m
            .sparse()
            .iter()
            .map(|&(i, e)| if e == 1 { format!("tau_{i}") } else { format!("tau_{i}^{e}") })
            .collect::<Vec<_>>()
            .join(" ");
        write!(f, "<{}>_{}", body, self.genus)
    }
}

/// The correlator `∂ⁿ F_g / ∂t_{a_1} … ∂t_{a_n}` at `t = 0`.
///
/// Keys failing the selection rule return zero immediately. Admissible keys that do
/// not fit the truncation of `f` are an error, never a silent zero.
pub fn correlator(key: &CorrelatorKey, f: &Series) -> Result<Rational> {
    if !key.admissible() {
        return Ok(Rational::zero());
    }
    let spec = f.spec();
    let m = key.monomial();
    if !spec.admits(&m) {
        return Err(Error::InsufficientTruncation(format!("{key} needs a larger spec than {spec}")));
    }
    Ok(f.coeff(&m) * Rational::from_integer(key.symmetry_factor()))
}

/// Every admissible correlator with genus at most `gmax` stored in `f`, in canonical order.
pub fn correlator_table(f: &Series, gmax: u32) -> Vec<(CorrelatorKey, Rational)> {
    let mut rows: Vec<(CorrelatorKey, Rational)> = f
        .terms()
        .filter(|(m, _)| m.l() + 1 >= 0 && (m.l() + 1) as u32 <= gmax)
        .map(|(m, c)| {
            let key = CorrelatorKey::new(m.indices(), (m.l() + 1) as u32);
            let v = c * Rational::from_integer(key.symmetry_factor());
            (key, v)
        })
        .collect();
    rows.sort_by(|a, b| {
        (a.0.genus, a.0.indices.len(), &a.0.indices).cmp(&(b.0.genus, b.0.indices.len(), &b.0.indices))
    });
    rows
}

/// The special cases of `Z` with all but a few couplings set to zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RestrictedForm {
    /// `Z(t_0) = exp(t_0² / 2λ²)`.
    Zt0,
    /// `Z(t_0, t_1) = exp(t_0² / (2λ²(1 - t_1)) + ½ log 1/(1 - t_1))`.
    Zt0t1,
    /// `Z(t_2) = Σ t_2^{2n} λ^{2n} (6n-1)!! / (3!^{2n} (2n)!)`.
    Zt2,
    /// `F(t_0, t_2)` genus by genus through the `a_g` recursion.
    Zt0t2,
    /// `Z(t_{2k-1})`.
    ZOdd(usize),
    /// `Z(t_{2k})`.
    ZEven(usize),
}

/// A closed-form table together with the closed-form `Z` (or `F`) it is checked against.
#[derive(Clone, Debug)]
pub struct RestrictedTable {
    /// Which special case.
    pub form: RestrictedForm,
    /// The series produced by the special-case formula.
    pub formula: Series,
    /// The same object computed from the general closed form.
    pub reference: Series,
}

impl RestrictedTable {
    /// `formula - reference`, zero when the special case is reproduced.
    pub fn residual(&self) -> Series {
        &self.formula - &self.reference
    }
}

/// The genus-recursion constants: `a_1 = 1/2`,
/// `a_g = ½ (Σ_{h=1}^{g-1} a_h a_{g-h} + (3g - 4) a_{g-1})`.
pub fn a_constants(gmax: usize) -> Vec<Rational> {
    let mut a = vec![Rational::zero(), frac(1, 2)];
    for g in 2..=gmax {
        let mut s = Rational::zero();
        for h in 1..g {
            s += &a[h] * &a[g - h];
        }
        s += q(3 * g as i64 - 4) * &a[g - 1];
        a.push(s * frac(1, 2));
    }
    a.truncate(gmax + 1);
    a
}

/// `b_g = a_g / (3g - 3)` for `g ≥ 2`, so that `F_g(t_0, t_2) = b_g t_2^{2g-2} (1 - 2 t_0 t_2)^{-(3g-3)/2}`.
pub fn b_constants(gmax: usize) -> Vec<Rational> {
    let a = a_constants(gmax);
    (0..=gmax)
        .map(|g| if g < 2 { Rational::zero() } else { &a[g] / q(3 * g as i64 - 3) })
        .collect()
}

fn single_var_sum<F>(spec: TruncationSpec, var: usize, order: usize, term: F) -> Series
where
    F: Fn(usize) -> (u32, i32, Rational),
{
    let mut s = Series::zero(spec);
    for n in 0..=order {
        let (e, l, c) = term(n);
        s.add_term(Monomial::from_sparse(&[(var, e)], l), c);
    }
    s
}

/// Reproduces one special case and pairs it with the general closed form.
///
/// `order` counts terms of the defining sum (or genera for `Zt0t2`).
pub fn restricted_form(form: RestrictedForm, order: usize) -> Result<RestrictedTable> {
    if order > 40 {
        return Err(Error::SizeLimit(format!("order {order} above 40")));
    }
    let dfq = |n: i64| Rational::from_integer(double_factorial(n));
    let fq = |n: u64| Rational::from_integer(factorial(n));
    match form {
        RestrictedForm::Zt0 => {
            let d = 2 * order as u32;
            let spec = TruncationSpec::z_window(0, d);
            let formula = single_var_sum(spec, 0, order, |n| {
                (2 * n as u32, -(n as i32), Rational::new(1.into(), BigInt::from(2).pow(n as u32) * factorial(n as u64)))
            });
            let reference = closed_form_z_on(spec, &[0])?;
            Ok(RestrictedTable { form, formula, reference })
        }
        RestrictedForm::Zt0t1 => {
            let spec = TruncationSpec::z_window(1, order as u32);
            let t0 = Series::var(spec, 0)?;
            let t1 = Series::var(spec, 1)?;
            let one = Series::one(spec);
            let inv = (&one - &t1).invert_unit()?;
            let quad = (&(&t0 * &t0) * &inv).scale(&frac(1, 2)).shift_l(-1);
            let logterm = (-(&one - &t1).log()?).scale(&frac(1, 2));
            let formula = (&quad + &logterm).exp()?;
            let reference = closed_form_z_on(spec, &[0, 1])?;
            Ok(RestrictedTable { form, formula, reference })
        }
        RestrictedForm::Zt2 => {
            let spec = TruncationSpec::z_window(2, 2 * order as u32);
            let formula = single_var_sum(spec, 2, order, |n| {
                let c = dfq(6 * n as i64 - 1) / (fq(3).pow(2 * n as i32) * fq(2 * n as u64));
                (2 * n as u32, n as i32, c)
            });
            let reference = closed_form_z_on(spec, &[2])?;
            Ok(RestrictedTable { form, formula, reference })
        }
        RestrictedForm::ZOdd(k) => {
            if k == 0 {
                return Err(Error::Domain("Z_odd needs k >= 1".into()));
            }
            let var = 2 * k - 1;
            let spec = TruncationSpec::z_window(var, order as u32);
            let formula = single_var_sum(spec, var, order, |n| {
                let c = dfq(2 * (n * k) as i64 - 1) / (fq(2 * k as u64).pow(n as i32) * fq(n as u64));
                (n as u32, (n * (k - 1)) as i32, c)
            });
            let reference = closed_form_z_on(spec, &[var])?;
            Ok(RestrictedTable { form, formula, reference })
        }
        RestrictedForm::ZEven(k) => {
            if k == 0 {
                return Err(Error::Domain("Z_even needs k >= 1".into()));
            }
            let var = 2 * k;
            let spec = TruncationSpec::z_window(var, 2 * order as u32);
            let formula = single_var_sum(spec, var, order, |n| {
                let c = dfq(2 * (n * (2 * k + 1)) as i64 - 1)
                    / (fq(2 * k as u64 + 1).pow(2 * n as i32) * fq(2 * n as u64));
                (2 * n as u32, (n * (2 * k - 1)) as i32, c)
            });
            let reference = closed_form_z_on(spec, &[var])?;
            Ok(RestrictedTable { form, formula, reference })
        }
        RestrictedForm::Zt0t2 => {
            let gmax = order.max(1);
            let d = (2 * gmax) as u32;
            let full = TruncationSpec::z_window(2, d);
            let z = closed_form_z_on(full, &[0, 2])?;
            let reference = free_energy(&z)?.retain(|m, _| m.l() <= gmax as i32 - 1);
            let formula = f_t0t2_formula(full, gmax)?;
            Ok(RestrictedTable { form, formula, reference })
        }
    }
}

/// `F(t_0, t_2)` for genera `0..=gmax` from the closed radical and logarithm forms.
///
/// Genus 0 is `((1 - 2x)^{3/2} - 1 + 3x) / (3 t_2² λ²)` with `x = t_0 t_2`, expanded as
/// `Σ_{n≥2} C(3/2, n) (-2)^n / 3 · t_0^n t_2^{n-2}`. Genus 1 is `-¼ log(1 - 2 t_0 t_2)`.
pub fn f_t0t2_formula(spec: TruncationSpec, gmax: usize) -> Result<Series> {
    let mut out = Series::zero(spec);
    let mut binom = Rational::one();
    let three_halves = frac(3, 2);
    for n in 1..=spec.dmax as i64 {
        binom = binom * (&three_halves - q(n - 1)) / q(n);
        if n >= 2 {
            let c = &binom * Rational::from_integer(BigInt::from(-2).pow(n as u32)) / q(3);
            out.add_term(Monomial::from_sparse(&[(0, n as u32), (2, n as u32 - 2)], -1), c);
        }
    }
    let x = Series::monomial(spec, Monomial::from_sparse(&[(0, 1), (2, 1)], 0), q(2));
    let base = &Series::one(spec) - &x;
    out = &out + &(-base.log()?).scale(&frac(1, 4));
    let b = b_constants(gmax);
    for g in 2..=gmax {
        let p = base.pow_q(&frac(-(3 * g as i64 - 3), 2))?;
        let lead = Monomial::from_sparse(&[(2, 2 * g as u32 - 2)], g as i32 - 1);
        out = &out + &p.mul_monomial(&lead, &b[g]);
    }
    Ok(out)
}

/// Rebuilds `F` from its `t_1`-free terms as
/// `½ log 1/(1 - t_1) + Σ c_μ λ^{2ℓ} μ (1 - t_1)^{-(ℓ + deg μ)}` and returns the
/// difference from `f`.
pub fn one_minus_t1_form(f: &Series) -> Result<Series> {
    let rebuilt = one_minus_t1_rebuild(f)?;
    Ok(&rebuilt - f)
}

/// The reconstruction used by [`one_minus_t1_form`].
pub fn one_minus_t1_rebuild(f: &Series) -> Result<Series> {
    let spec = f.spec();
    if spec.kmax < 1 {
        return Err(Error::Domain("the (1 - t_1) form needs kmax >= 1".into()));
    }
    let one = Series::one(spec);
    let base = &one - &Series::var(spec, 1)?;
    let inv = base.invert_unit()?;
    let mut out = (-base.log()?).scale(&frac(1, 2));
    let mut powers = vec![one];
    for (m, c) in f.terms() {
        if m.exp(1) > 0 {
            continue;
        }
        let p = m.l() + m.deg() as i32;
        if p < 0 {
            return Err(Error::Domain(format!("negative (1 - t_1) exponent at {m}")));
        }
        while powers.len() <= p as usize {
            let next = &powers[powers.len() - 1] * &inv;
            powers.push(next);
        }
        out = &out + &powers[p as usize].mul_monomial(m, c);
    }
    Ok(out)
}
