//! The special deformation of the spectral curve and its quantization.
//!
//! The curve is stored as `ỹ = √2·y`, so every coefficient is a rational series:
//!
//! `ỹ = Σ_{n≥0} (t_n - δ_{n,1})/n! zⁿ + 2/z + 2 Σ_{n≥0} w_n z^{-n-2}`, with
//! `w_n = (n+1)! ∂F_0/∂t_n`.
//!
//! In this normalization `½(y²)_- = ¼(ỹ²)_-`. The quantized field uses the rescaled
//! modes `β̃_m = √2·β_m`, which act on the coupling ring as
//!
//! * `β̃_{-(k+1)} = λ^{-2} t̃_k/k!` (multiplication, `t̃_k = t_k - δ_{k,1}`),
//! * `β̃_0 = 2`,
//! * `β̃_{k+1} = 2λ² (k+1)! ∂/∂t_k`.
//!
//! The module also solves the triangular uniqueness system in free variables `v_n` and
//! reverts the signed Catalan curve.

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};

use crate::combinat::{factorial, factorial_q, q};
use crate::constraints::{virasoro, DiffOperator, Family};
use crate::error::{Error, Result};
use crate::icoords::f0_explicit;
use crate::par;
use crate::report::{Check, Report};
use crate::series_core::{Monomial, OuterSeries, Rational, Series, Slot, TruncationSpec};

/// The factor relating `(ỹ^{⊙2})_-` to `L̃_m`: the `z^{-m-2}` coefficient equals
/// `4·L̃_m`, i.e. `2·L̃_m` for `ŷ` and `L̃_m` for `½ŷ^{⊙2}`.
pub const Y_TILDE_NORMALIZATION: i64 = 4;

/// The rescaled curve `ỹ = √2·y` as three coefficient lists.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralSeries {
    /// `plus[n]` is the coefficient of `zⁿ`.
    pub plus: Vec<Series>,
    /// Coefficient of `z^{-1}`.
    pub pole: Rational,
    /// `minus[n]` is the coefficient of `z^{-n-2}`.
    pub minus: Vec<Series>,
    /// `(ỹ²)_-` is exact on `z^{-1} .. z^{-order}`.
    pub order: usize,
}

impl SpectralSeries {
    /// Common spec of all coefficients.
    pub fn spec(&self) -> TruncationSpec {
        self.plus[0].spec()
    }

    /// `w_n`, the coefficient of `z^{-n-2}` in `W_{0,1}`.
    pub fn w(&self, n: usize) -> Series {
        match self.minus.get(n) {
            Some(s) => s.scale(&(q(1) / q(2))),
            None => Series::zero(self.spec()),
        }
    }

    /// `(exponent, coefficient)` pairs of `ỹ`.
    fn pieces(&self) -> Vec<(i32, Series)> {
        let spec = self.spec();
        let mut out: Vec<(i32, Series)> = self.plus.iter().enumerate().map(|(n, s)| (n as i32, s.clone())).collect();
        out.push((-1, Series::constant(spec, self.pole.clone())));
        out.extend(self.minus.iter().enumerate().map(|(n, s)| (-(n as i32) - 2, s.clone())));
        out
    }

    fn slot(&self) -> Slot {
        Slot::zminus("z", self.order as i32)
    }

    /// `½(y²)_- = ¼(ỹ²)_-` on `z^{-1} .. z^{-order}`.
    pub fn half_y2_minus(&self) -> OuterSeries {
        let pieces = self.pieces();
        let mut out = OuterSeries::zero(vec![self.slot()], self.spec());
        let quarter = q(1) / q(4);
        for (ea, a) in &pieces {
            for (eb, b) in &pieces {
                let e = ea + eb;
                if e < 0 && e >= -(self.order as i32) {
                    out.add_coeff(vec![e], &(a * b).scale(&quarter));
                }
            }
        }
        out
    }

    /// `W_{0,1} = 1/z + Σ w_n z^{-n-2}` read off the minus part.
    pub fn w01(&self) -> OuterSeries {
        let spec = self.spec();
        let mut out = OuterSeries::zero(vec![self.slot()], spec);
        out.add_coeff(vec![-1], &Series::one(spec));
        for n in 0..self.minus.len() {
            out.add_coeff(vec![-(n as i32) - 2], &self.w(n));
        }
        out
    }

    /// `W_{0,1}²` on `z^{-1} .. z^{-order}`.
    pub fn w01_squared(&self) -> Result<OuterSeries> {
        let w = self.w01();
        w.checked_mul(&w)
    }
}

/// `t_n - δ_{n,1}` in `spec`.
fn shifted(spec: TruncationSpec, n: usize) -> Series {
    let mut s = if n <= spec.kmax { Series::monomial(spec, Monomial::var(n), Rational::one()) } else { Series::zero(spec) };
    if n == 1 {
        s = &s - &Series::one(spec);
    }
    s
}

/// `(n+1)! ∂F_0/∂t_n` for `n < count` on `t_0..t_kmax`, degree `≤ dmax`, grade 0.
///
/// `F_0` is built on enough couplings that every restricted derivative is exact.
pub fn genus0_gradient(kmax: usize, dmax: u32, count: usize) -> Result<Vec<Series>> {
    let spec = TruncationSpec::new(kmax, dmax, 0, 0)?;
    let wide = TruncationSpec::new(kmax.max(count), dmax + 1, -1, 0)?;
    let f0 = f0_explicit(wide)?.0.slice_l(-1).shift_l(1);
    let out = par::map_range(count, |n| -> Result<Series> {
        let d = f0.derive(n)?.scale(&factorial_q(n as u64 + 1));
        Ok(d.retain(|m, _| m.max_index().is_none_or(|i| i <= kmax)).retruncate(spec))
    });
    out.into_iter().collect()
}

/// The special deformation `ỹ` on `t_0..t_kmax`, degree `≤ dmax`, exact in `(ỹ²)_-`
/// through `z^{-order}`.
pub fn special_y(kmax: usize, dmax: u32, order: usize) -> Result<SpectralSeries> {
    if order == 0 {
        return Err(Error::Domain("special_y needs order >= 1".into()));
    }
    let spec = TruncationSpec::new(kmax, dmax, 0, 0)?;
    let top = kmax.max(1);
    let plus: Vec<Series> = (0..=top).map(|n| shifted(spec, n).scale(&(Rational::one() / factorial_q(n as u64)))).collect();
    let count = (top + order).saturating_sub(1);
    let minus = genus0_gradient(kmax, dmax, count)?.into_iter().map(|s| s.scale(&q(2))).collect();
    Ok(SpectralSeries { plus, pole: q(2), minus, order })
}

/// `½(y²)_- - W_{0,1}²`; zero when `y` is the special deformation.
pub fn check_y2_minus(y: &SpectralSeries) -> Result<OuterSeries> {
    y.half_y2_minus().checked_sub(&y.w01_squared()?)
}

/// Solves `(ỹ²)_-/4 = (1/z + Σ w_n z^{-n-2})²` for `w_0 .. w_{dmax-1}` as polynomials
/// in free variables `v_0..v_vmax` (stored as `t_0..t_vmax`), degree `≤ dmax`.
///
/// The degree-`n` part obeys `w_m^{(n)} = Σ_j v_j w_{j+m-1}^{(n-1)}` with `w_{-1} = 1`,
/// so `w_0^{(1)} = v_0` and `w_m^{(n)} = 0` for `n ≤ m`.
pub fn uniqueness_solve(vmax: usize, dmax: u32) -> Result<Vec<Series>> {
    let spec = TruncationSpec::new(vmax, dmax, 0, 0)?;
    let len = dmax as usize;
    let d = dmax as usize;
    let vars: Vec<Series> = (0..=vmax).map(|j| Series::monomial(spec, Monomial::var(j), Rational::one())).collect();
    // comp[m + 1][n] is the degree-n part of w_m; index 0 holds w_{-1} = 1.
    let mut comp = vec![vec![Series::zero(spec); d + 1]; len + 1];
    comp[0][0] = Series::one(spec);
    for n in 1..=d {
        for m in 0..len.min(n) {
            let mut acc = Series::zero(spec);
            for (j, v) in vars.iter().enumerate() {
                let idx = j + m;
                if idx > len || idx + 1 > n {
                    continue;
                }
                let prev = &comp[idx][n - 1];
                if !prev.is_zero() {
                    acc = &acc + &(v * prev);
                }
            }
            comp[m + 1][n] = acc;
        }
    }
    Ok((1..=len)
        .map(|i| comp[i].iter().fold(Series::zero(spec), |a, s| &a + s))
        .collect())
}

/// Residuals `Σ_j (v_j - δ_{j,1}) w_{j+m-1}` of the uniqueness system for `m < ws.len()`,
/// with `w_{-1} = 1`.
pub fn uniqueness_residuals(ws: &[Series]) -> Vec<Series> {
    let Some(first) = ws.first() else { return Vec::new() };
    let spec = first.spec();
    let w = |i: i64| -> Option<Series> {
        if i == -1 {
            Some(Series::one(spec))
        } else {
            ws.get(i as usize).cloned()
        }
    };
    (0..ws.len())
        .map(|m| {
            let mut acc = Series::zero(spec);
            for j in 0..=spec.kmax.max(1) {
                if let Some(wk) = w(j as i64 + m as i64 - 1) {
                    acc = &acc + &(&shifted(spec, j) * &wk);
                }
            }
            acc
        })
        .collect()
}

/// Substitutes `v_n = t_n/n!`.
pub fn substitute_v(s: &Series) -> Series {
    let terms = s.terms().map(|(m, c)| {
        let mut c = c.clone();
        for (k, e) in m.sparse() {
            c /= factorial_q(k as u64).pow(e as i32);
        }
        (m.clone(), c)
    });
    Series::from_terms(s.spec(), terms)
}

/// Checks the uniqueness solution: residuals vanish, the low-degree parts have the
/// stated shape, and `v_n = t_n/n!` turns `w_n` into `(n+1)! ∂F_0/∂t_n`.
pub fn uniqueness_report(vmax: usize, dmax: u32) -> Result<Report> {
    let ws = uniqueness_solve(vmax, dmax)?;
    let mut r = Report::new();
    for (m, res) in uniqueness_residuals(&ws).iter().enumerate() {
        r.series(format!("uniqueness equation m={m}"), res);
    }
    let v0 = Series::monomial(ws[0].spec(), Monomial::var(0), Rational::one());
    r.series("w_0^(1) = v_0", &(&ws[0].retain(|m, _| m.deg() == 1) - &v0));
    for (n, w) in ws.iter().enumerate() {
        r.series(format!("w_{n}^(j) = 0 for j <= {n}"), &w.retain(|m, _| m.deg() as usize <= n));
    }
    let grads = genus0_gradient(vmax, dmax, ws.len())?;
    for (n, (w, g)) in ws.iter().zip(&grads).enumerate() {
        r.series(format!("w_{n} = {}! dF_0/dt_{n}", n + 1), &(&substitute_v(w) - g));
    }
    Ok(r)
}

/// Truncated product of two coefficient lists.
fn poly_mul(a: &[Rational], b: &[Rational], n: usize) -> Vec<Rational> {
    let mut out = vec![Rational::zero(); n];
    for (i, x) in a.iter().enumerate().take(n) {
        if x.is_zero() {
            continue;
        }
        for (j, y) in b.iter().enumerate().take(n - i) {
            out[i + j] += x * y;
        }
    }
    out
}

/// Truncated reciprocal of a list with unit constant term.
fn poly_inv(a: &[Rational], n: usize) -> Vec<Rational> {
    let mut out = vec![Rational::zero(); n];
    out[0] = Rational::one() / &a[0];
    for k in 1..n {
        let mut s = Rational::zero();
        for j in 1..=k.min(a.len() - 1) {
            s += &a[j] * &out[k - j];
        }
        out[k] = -s * &out[0];
    }
    out
}

/// Truncated composition `a(b(x))` with `b(0) = 0`.
fn poly_compose(a: &[Rational], b: &[Rational], n: usize) -> Vec<Rational> {
    let mut out = vec![Rational::zero(); n];
    let mut power = vec![Rational::zero(); n];
    power[0] = Rational::one();
    for c in a.iter().take(n) {
        for (o, p) in out.iter_mut().zip(&power) {
            *o += c * p;
        }
        power = poly_mul(&power, b, n);
    }
    out
}

/// Reverts the signed Catalan curve `y = -u + 1/u` (`u = z/√2`) at `y = ∞`.
///
/// Returns `a_0 .. a_order` with `u = Σ a_n y^{-2n-1}`, found from `u(y + u) = 1`, which
/// gives `a_0 = 1` and `a_n = -Σ_{i+j=n-1} a_i a_j`. The values are `(-1)ⁿ C_n`.
pub fn catalan_reversion(order: usize) -> Result<Vec<Rational>> {
    if order > 20 {
        return Err(Error::SizeLimit(format!("catalan reversion order {order} > 20")));
    }
    let mut a: Vec<Rational> = vec![Rational::one()];
    for n in 1..=order {
        let s: Rational = (0..n).map(|i| &a[i] * &a[n - 1 - i]).sum();
        a.push(-s);
    }
    Ok(a)
}

/// The Catalan numbers `C_0 .. C_order` read off the reversion.
pub fn catalan_numbers(order: usize) -> Result<Vec<BigInt>> {
    Ok(catalan_reversion(order)?.into_iter().map(|c| c.abs().to_integer()).collect())
}

/// Both compositions of the reversion with the curve, as coefficient lists in `y^{-2}`
/// and `u²` that must equal `1, 0, 0, …` through `order`.
///
/// With `A(x) = Σ a_n xⁿ`: `y = -u + 1/u` after substitution reads `1/A(x) - x A(x)`, and
/// `u ↦ y ↦ u` reads `B(x) A(x B(x)²)` with `B(x) = 1/(1 - x)`.
pub fn catalan_round_trip(a: &[Rational]) -> (Vec<Rational>, Vec<Rational>) {
    let n = a.len();
    let inv = poly_inv(a, n);
    let mut first = inv.clone();
    for k in 1..n {
        first[k] -= &a[k - 1];
    }
    let b: Vec<Rational> = vec![Rational::one(); n];
    let mut xb2 = vec![Rational::zero(); n];
    let b2 = poly_mul(&b, &b, n);
    xb2[1..n].clone_from_slice(&b2[..(n - 1)]);
    let second = poly_mul(&b, &poly_compose(a, &xb2, n), n);
    (first, second)
}

/// True when a coefficient list is `1, 0, 0, …`.
fn is_unit_list(v: &[Rational]) -> bool {
    v.iter().enumerate().all(|(i, c)| if i == 0 { c.is_one() } else { c.is_zero() })
}

/// A mode `β̃_m = √2·β_m` of the quantized field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BetaOperator {
    /// Mode index `m`.
    pub index: i32,
}

impl BetaOperator {
    /// The mode with index `m`.
    pub fn new(index: i32) -> Self {
        BetaOperator { index }
    }

    /// True for `m < 0`.
    pub fn is_creator(&self) -> bool {
        self.index < 0
    }

    /// True for `m > 0`.
    pub fn is_annihilator(&self) -> bool {
        self.index > 0
    }

    /// The operator on `spec`; modes whose coupling lies beyond `kmax` act as zero.
    ///
    /// The spec window must contain `ℓ = -1` and `ℓ = 1` for the coefficients to survive.
    pub fn operator(&self, spec: TruncationSpec) -> Result<DiffOperator> {
        let m = self.index;
        if m == 0 {
            return Ok(DiffOperator::multiplication(&Series::constant(spec, q(2))));
        }
        if m < 0 {
            let k = (-m - 1) as usize;
            let c = shifted(spec, k).shift_l(-1).scale(&(Rational::one() / factorial_q(k as u64)));
            return Ok(DiffOperator::multiplication(&c));
        }
        let k = (m - 1) as usize;
        if k > spec.kmax {
            return Ok(DiffOperator::zero(spec));
        }
        let c = Rational::from_integer(2 * factorial(k as u64 + 1));
        DiffOperator::derivative(spec, &[(k, 1)], Series::monomial(spec, Monomial::lambda(1), c))
    }
}

/// The normally ordered product `:β̃_a β̃_b:`, creators to the left.
pub fn normal_product(a: BetaOperator, b: BetaOperator, spec: TruncationSpec) -> Result<DiffOperator> {
    let (x, y) = if a.index <= b.index { (a, b) } else { (b, a) };
    x.operator(spec)?.compose(&y.operator(spec)?)
}

/// The commutator `[β̃_a, β̃_b]`.
pub fn beta_commutator(a: BetaOperator, b: BetaOperator, spec: TruncationSpec) -> Result<DiffOperator> {
    a.operator(spec)?.commutator(&b.operator(spec)?)
}

/// The `z^{-m-2}` coefficient `Σ_{a+b=m} :β̃_a β̃_b:` of `(ỹ^{⊙2})_-`, for `m ≥ -1`.
pub fn quadratic_coefficient(m: i32, spec: TruncationSpec) -> Result<DiffOperator> {
    if m < -1 {
        return Err(Error::Domain(format!("(y^2)_- has no z^{} coefficient", -m - 2)));
    }
    let reach = spec.kmax.max(1) as i32 + 1;
    let mut total = DiffOperator::zero(spec);
    for a in -reach..=m + reach {
        let p = normal_product(BetaOperator::new(a), BetaOperator::new(m - a), spec)?;
        total = total.add(&p)?;
    }
    Ok(total)
}

/// `⟨0| A |0⟩`: apply `A` to `1` and evaluate at `t̃ = 0` (`t_1 = 1`, all other `t_k = 0`).
///
/// The result is a series in `λ` alone.
pub fn vacuum_expectation(op: &DiffOperator) -> Result<Series> {
    let spec = op.spec();
    let image = op.apply(&Series::one(spec))?;
    let mut out = Series::zero(spec);
    for (m, c) in image.terms() {
        if m.sparse().iter().all(|&(k, _)| k == 1) {
            out.add_term(Monomial::lambda(m.l()), c.clone());
        }
    }
    Ok(out)
}

/// A spec on `t_0..t_kmax` roomy enough for products of two modes.
pub fn mode_spec(kmax: usize) -> TruncationSpec {
    TruncationSpec { kmax, dmax: 4, lmin: -2, lmax: 2 }
}

/// `⟨ŷ(z) ŷ(w)⟩` (or its normally ordered version) for modes `|m| ≤ order + 1`,
/// on slots `z, w ∈ [-(order+2), order]`.
pub fn two_point_vev(order: usize, normal_ordered: bool) -> Result<OuterSeries> {
    let spec = mode_spec(order);
    let top = order as i32 + 1;
    let slot = |name: &str| Slot::new(name, -top - 1, top - 1);
    let mut out = OuterSeries::zero(vec![slot("z"), slot("w")], spec);
    let pairs: Vec<(i32, i32)> = (-top..=top).flat_map(|a| (-top..=top).map(move |b| (a, b))).collect();
    let values = par::map(&pairs, |&(a, b)| -> Result<Series> {
        let (ba, bb) = (BetaOperator::new(a), BetaOperator::new(b));
        let op = if normal_ordered { normal_product(ba, bb, spec)? } else { ba.operator(spec)?.compose(&bb.operator(spec)?)? };
        Ok(vacuum_expectation(&op)?.scale(&(q(1) / q(2))))
    });
    for ((a, b), v) in pairs.into_iter().zip(values) {
        out.add_coeff(vec![-a - 1, -b - 1], &v?);
    }
    Ok(out)
}

/// The contraction `ŷ(z)ŷ(w) - :ŷ(z)ŷ(w):`, which should be `Σ (n+1) z^{-n-2} wⁿ`.
pub fn propagator(order: usize) -> Result<OuterSeries> {
    two_point_vev(order, false)?.checked_sub(&two_point_vev(order, true)?)
}

/// The ratio between the identity terms of `(ỹ^{⊙2})_-` at `z^{-2}` and of `L̃_0`.
pub fn quantum_normalization(spec: TruncationSpec) -> Result<Rational> {
    let q0 = quadratic_coefficient(0, spec)?.coeff(&[]).coeff(&Monomial::one());
    let l0 = virasoro(0, Family::LTilde, spec)?.coeff(&[]).coeff(&Monomial::one());
    if l0.is_zero() {
        return Err(Error::Domain("L~_0 has no identity term".into()));
    }
    Ok(q0 / l0)
}

/// Applies the coefficient operators of `(ỹ^{⊙2})_-` at `z^{-m-2}`, `-1 ≤ m ≤ mmax`, to `Z`
/// and compares each with `L̃_m` up to the normalization fixed at `m = 0`.
///
/// With `Z` on `t_0..t_K`, degree `≤ D`, residuals are exact on `t_0..t_{K-mmax-1}` at
/// degree `≤ D-2`.
pub fn quantize_check(z: &Series, mmax: i32) -> Result<Report> {
    let spec = z.spec();
    let need = (mmax.max(0) + 1) as usize;
    if spec.kmax < need || spec.dmax < 2 {
        return Err(Error::InsufficientTruncation(format!("Z on {spec} cannot support m <= {mmax}")));
    }
    let (kt, dt) = (spec.kmax - need, spec.dmax - 2);
    let opspec = spec.with_window(spec.lmin.min(-1) - 1, spec.lmax.max(1) + 2);
    let zw = z.retruncate(opspec);
    let c = quantum_normalization(opspec)?;
    let mut r = Report::new();
    r.push(Check::rational("(y~^2)_- normalization at m=0", &c, &q(Y_TILDE_NORMALIZATION)));
    let ms: Vec<i32> = (-1..=mmax).collect();
    let rows = par::map(&ms, |&m| -> Result<(Series, bool)> {
        let op = quadratic_coefficient(m, opspec)?;
        let res = op.apply_filtered(&zw, |x| x.deg() <= dt && x.max_index().is_none_or(|i| i <= kt))?;
        let same = op.sub(&virasoro(m, Family::LTilde, opspec)?.scale(&c))?.is_zero();
        Ok((res, same))
    });
    for (m, row) in ms.iter().zip(rows) {
        let (res, same) = row?;
        r.series(format!("(y^2)_- z^{} Z = 0", -m - 2), &res);
        r.push(Check::flag(format!("(y^2)_- z^{} = c L~_{m}", -m - 2), same, "operators differ"));
    }
    Ok(r)
}

/// The spectral suite: the quadratic identity, uniqueness, the Catalan reversion, the
/// quantized constraints and the propagator.
pub fn spectral_report(kmax: usize, dmax: u32, order: usize, mmax: i32) -> Result<Report> {
    let mut r = Report::new();
    let y = special_y(kmax, dmax, order)?;
    r.push(Check::outer("1/2 (y^2)_- = W_{0,1}^2", &check_y2_minus(&y)?));
    r.absorb("uniqueness", uniqueness_report(kmax, dmax)?);
    let a = catalan_reversion(order.max(5))?;
    let (first, second) = catalan_round_trip(&a);
    r.push(Check::flag("Catalan reversion round trip", is_unit_list(&first) && is_unit_list(&second), "composition is not the identity"));
    let expected: Vec<i64> = vec![1, -1, 2, -5, 14, -42];
    let ok = a.iter().zip(&expected).all(|(x, &e)| *x == q(e));
    r.push(Check::flag("signed Catalan numbers 1, -1, 2, -5, 14, -42", ok, "sequence differs"));
    let kz = kmax + mmax.max(0) as usize + 1;
    let zspec = TruncationSpec::z_window(kz, dmax + 2);
    r.absorb("quantized", quantize_check(&crate::partition::closed_form_z(zspec)?, mmax)?);
    let p = propagator(order)?;
    let mut ok = true;
    for (e, s) in p.terms() {
        let n = -e[0] - 2;
        ok &= n >= 0 && e[1] == n && *s == Series::constant(s.spec(), q(n as i64 + 1));
    }
    ok &= p.terms().count() == order + 1;
    r.push(Check::flag("propagator = sum (n+1) z^{-n-2} w^n", ok, "contraction differs"));
    Ok(r)
}
