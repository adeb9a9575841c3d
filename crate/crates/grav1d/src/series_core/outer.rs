use std::collections::BTreeMap;
use std::fmt;

use num_traits::Zero;

use super::{fmt_rational, Rational, Series, TruncationSpec};
use crate::error::{Error, Result};
use crate::par;

/// An auxiliary expansion variable with an inclusive exponent range.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Slot {
    /// Display name, e.g. `z1`.
    pub name: String,
    /// Smallest stored exponent.
    pub emin: i32,
    /// Largest stored exponent.
    pub emax: i32,
}

impl Slot {
    /// A slot with exponents in `[emin, emax]`.
    pub fn new(name: &str, emin: i32, emax: i32) -> Self {
        Slot { name: name.to_string(), emin, emax }
    }

    /// A `z^{-1}` expansion slot holding `z^{-1} .. z^{-order}`.
    pub fn zminus(name: &str, order: i32) -> Self {
        Slot::new(name, -order, -1)
    }

    /// A `w` expansion slot holding `w^0 .. w^order`.
    pub fn wplus(name: &str, order: i32) -> Self {
        Slot::new(name, 0, order)
    }

    /// True when the exponent lies in range.
    pub fn holds(&self, e: i32) -> bool {
        e >= self.emin && e <= self.emax
    }
}

/// A finite sum `Σ c_e(t) ∏ x_i^{e_i}` over slot variables `x_i` with series coefficients.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OuterSeries {
    slots: Vec<Slot>,
    spec: TruncationSpec,
    terms: BTreeMap<Vec<i32>, Series>,
}

impl OuterSeries {
    /// The zero element for the given slot layout and inner spec.
    pub fn zero(slots: Vec<Slot>, spec: TruncationSpec) -> Self {
        OuterSeries { slots, spec, terms: BTreeMap::new() }
    }

    /// A single term `s · ∏ x_i^{e_i}`, dropped if the exponents are out of range.
    pub fn term(slots: Vec<Slot>, exps: Vec<i32>, s: Series) -> Self {
        let spec = s.spec();
        let mut out = OuterSeries::zero(slots, spec);
        out.add_coeff(exps, &s);
        out
    }

    /// Slot descriptors.
    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    /// Inner truncation spec.
    pub fn spec(&self) -> TruncationSpec {
        self.spec
    }

    /// Nonzero coefficients keyed by exponent vector, in ascending order.
    pub fn terms(&self) -> impl Iterator<Item = (&Vec<i32>, &Series)> {
        self.terms.iter()
    }

    /// True for the zero element.
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Coefficient of `∏ x_i^{e_i}`, zero when absent.
    pub fn coeff(&self, exps: &[i32]) -> Series {
        self.terms.get(exps).cloned().unwrap_or_else(|| Series::zero(self.spec))
    }

    fn in_range(&self, exps: &[i32]) -> bool {
        exps.len() == self.slots.len() && exps.iter().zip(&self.slots).all(|(e, s)| s.holds(*e))
    }

    /// Adds `s` to the coefficient of `exps`; out-of-range exponents are dropped.
    pub fn add_coeff(&mut self, exps: Vec<i32>, s: &Series) {
        if s.is_zero() || !self.in_range(&exps) {
            return;
        }
        let s = if s.spec() == self.spec { s.clone() } else { s.retruncate(self.spec) };
        match self.terms.get_mut(&exps) {
            Some(c) => {
                *c = &*c + &s;
                if c.is_zero() {
                    self.terms.remove(&exps);
                }
            }
            None => {
                self.terms.insert(exps, s);
            }
        }
    }

    fn check_layout(&self, other: &OuterSeries) -> Result<()> {
        if self.slots != other.slots {
            return Err(Error::SlotMismatch(format!("{:?} vs {:?}", self.slots, other.slots)));
        }
        if self.spec != other.spec {
            return Err(Error::SpecMismatch(self.spec.to_string(), other.spec.to_string()));
        }
        Ok(())
    }

    /// Coefficientwise sum.
    pub fn checked_add(&self, other: &OuterSeries) -> Result<OuterSeries> {
        self.check_layout(other)?;
        let mut out = self.clone();
        for (e, s) in &other.terms {
            out.add_coeff(e.clone(), s);
        }
        Ok(out)
    }

    /// Coefficientwise difference.
    pub fn checked_sub(&self, other: &OuterSeries) -> Result<OuterSeries> {
        self.check_layout(other)?;
        let mut out = self.clone();
        for (e, s) in &other.terms {
            out.add_coeff(e.clone(), &-s);
        }
        Ok(out)
    }

    /// Product with exponents added and truncated to the slot ranges.
    pub fn checked_mul(&self, other: &OuterSeries) -> Result<OuterSeries> {
        self.check_layout(other)?;
        let pairs: Vec<(&Vec<i32>, &Series, &Vec<i32>, &Series)> = self
            .terms
            .iter()
            .flat_map(|(ea, sa)| other.terms.iter().map(move |(eb, sb)| (ea, sa, eb, sb)))
            .filter(|(ea, _, eb, _)| {
                let e: Vec<i32> = ea.iter().zip(eb.iter()).map(|(x, y)| x + y).collect();
                self.in_range(&e)
            })
            .collect();
        let prods = par::map(&pairs, |(ea, sa, eb, sb)| {
            let e: Vec<i32> = ea.iter().zip(eb.iter()).map(|(x, y)| x + y).collect();
            (e, *sa * *sb)
        });
        let mut out = OuterSeries::zero(self.slots.clone(), self.spec);
        for (e, s) in prods {
            out.add_coeff(e, &s);
        }
        Ok(out)
    }

    /// Product of elements over disjoint slot sets; the slot lists are concatenated.
    pub fn tensor(&self, other: &OuterSeries) -> Result<OuterSeries> {
        if self.spec != other.spec {
            return Err(Error::SpecMismatch(self.spec.to_string(), other.spec.to_string()));
        }
        let mut slots = self.slots.clone();
        slots.extend(other.slots.iter().cloned());
        let mut out = OuterSeries::zero(slots, self.spec);
        for (ea, sa) in &self.terms {
            for (eb, sb) in &other.terms {
                let mut e = ea.clone();
                e.extend(eb.iter().copied());
                out.add_coeff(e, &(sa * sb));
            }
        }
        Ok(out)
    }

    /// Applies `f` to every coefficient.
    pub fn map_coeffs<F: Fn(&Series) -> Series + Sync + Send>(&self, f: F) -> OuterSeries {
        let items: Vec<(&Vec<i32>, &Series)> = self.terms.iter().collect();
        let mapped = par::map(&items, |(e, s)| ((*e).clone(), f(s)));
        let mut out = OuterSeries::zero(self.slots.clone(), self.spec);
        for (e, s) in mapped {
            out.add_coeff(e, &s);
        }
        out
    }

    /// Applies a fallible `f` to every coefficient.
    pub fn try_map_coeffs<F>(&self, f: F) -> Result<OuterSeries>
    where
        F: Fn(&Series) -> Result<Series> + Sync + Send,
    {
        let items: Vec<(&Vec<i32>, &Series)> = self.terms.iter().collect();
        let mapped = par::map(&items, |(e, s)| f(s).map(|r| ((*e).clone(), r)));
        let mut out = OuterSeries::zero(self.slots.clone(), self.spec);
        for item in mapped {
            let (e, s) = item?;
            out.add_coeff(e, &s);
        }
        Ok(out)
    }

    /// Multiplies every coefficient by `c`.
    pub fn scale(&self, c: &Rational) -> OuterSeries {
        self.map_coeffs(|s| s.scale(c))
    }

    /// Multiplies every coefficient by the series `s`.
    pub fn mul_series(&self, s: &Series) -> OuterSeries {
        self.map_coeffs(|c| c * s)
    }

    /// Terms whose slot exponents are all strictly negative.
    pub fn minus_part(&self) -> OuterSeries {
        self.filter(|e| e.iter().all(|&x| x < 0))
    }

    /// Complement of [`OuterSeries::minus_part`].
    pub fn plus_part(&self) -> OuterSeries {
        self.filter(|e| !e.iter().all(|&x| x < 0))
    }

    /// Keeps the terms whose exponent vector satisfies `pred`.
    pub fn filter<F: Fn(&[i32]) -> bool>(&self, pred: F) -> OuterSeries {
        let terms = self
            .terms
            .iter()
            .filter(|(e, _)| pred(e))
            .map(|(e, s)| (e.clone(), s.clone()))
            .collect();
        OuterSeries { slots: self.slots.clone(), spec: self.spec, terms }
    }

    /// Derivative in slot variable `i`.
    pub fn slot_derive(&self, i: usize) -> Result<OuterSeries> {
        if i >= self.slots.len() {
            return Err(Error::SlotMismatch(format!("no slot {i}")));
        }
        let mut out = OuterSeries::zero(self.slots.clone(), self.spec);
        for (e, s) in &self.terms {
            if e[i] == 0 {
                continue;
            }
            let mut f = e.clone();
            f[i] -= 1;
            out.add_coeff(f, &s.scale(&Rational::from_integer(e[i].into())));
        }
        Ok(out)
    }

    /// Derivative in the coupling `t_k`, coefficientwise.
    pub fn derive_t(&self, k: usize) -> Result<OuterSeries> {
        self.try_map_coeffs(|s| s.derive(k))
    }

    /// Coefficientwise λ-slice.
    pub fn slice_l(&self, l: i32) -> OuterSeries {
        self.map_coeffs(|s| s.slice_l(l))
    }

    /// Reorders slots: slot `j` of the result is slot `perm[j]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> OuterSeries {
        let slots = perm.iter().map(|&p| self.slots[p].clone()).collect();
        let terms = self
            .terms
            .iter()
            .map(|(e, s)| (perm.iter().map(|&p| e[p]).collect(), s.clone()))
            .collect();
        OuterSeries { slots, spec: self.spec, terms }
    }

    /// Re-reads the element under new slot ranges, dropping exponents that no longer fit.
    pub fn with_slots(&self, slots: Vec<Slot>) -> Result<OuterSeries> {
        if slots.len() != self.slots.len() {
            return Err(Error::SlotMismatch("slot count differs".into()));
        }
        let mut out = OuterSeries::zero(slots, self.spec);
        for (e, s) in &self.terms {
            out.add_coeff(e.clone(), s);
        }
        Ok(out)
    }

    /// Re-reads all coefficients under another inner spec.
    pub fn retruncate(&self, spec: TruncationSpec) -> OuterSeries {
        let mut out = OuterSeries::zero(self.slots.clone(), spec);
        for (e, s) in &self.terms {
            out.add_coeff(e.clone(), &s.retruncate(spec));
        }
        out
    }

    /// Exponent vector and t-monomial of the first nonzero entry, for reports.
    pub fn first_entry(&self) -> Option<String> {
        let (e, s) = self.terms.iter().next()?;
        let (m, c) = s.first_term()?;
        Some(format!("{}: {} {}", self.fmt_exps(e), fmt_rational(c), m))
    }

    fn fmt_exps(&self, e: &[i32]) -> String {
        e.iter()
            .zip(&self.slots)
            .map(|(x, s)| format!("{}^{}", s.name, x))
            .collect::<Vec<_>>()
            .join("*")
    }
}

impl fmt::Display for OuterSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> =
            self.terms.iter().map(|(e, s)| format!("({}) {}", s, self.fmt_exps(e))).collect();
        write!(f, "{}", parts.join(" + "))
    }
}

impl OuterSeries {
    /// Sum of all coefficients' term counts.
    pub fn term_count(&self) -> usize {
        self.terms.values().map(|s| s.len()).sum()
    }

    /// True when every coefficient vanishes after restricting to λ-grade `l`.
    pub fn is_zero_at_l(&self, l: i32) -> bool {
        self.terms.values().all(|s| s.slice_l(l).is_zero())
    }

    /// The rational coefficient of a slot monomial times a t-monomial.
    pub fn rational_at(&self, exps: &[i32], m: &super::Monomial) -> Rational {
        self.terms.get(exps).map(|s| s.coeff(m)).unwrap_or_else(Rational::zero)
    }
}
