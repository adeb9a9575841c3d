use std::fmt;

use crate::error::{Error, Result};

/// Truncation bounds shared by all terms of a series.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TruncationSpec {
    /// Largest coupling index `K`.
    pub kmax: usize,
    /// Largest total t-degree `D`.
    pub dmax: u32,
    /// Smallest admissible λ²-exponent.
    pub lmin: i32,
    /// Largest admissible λ²-exponent.
    pub lmax: i32,
}

impl TruncationSpec {
    /// Builds a spec, rejecting an empty λ-window.
    pub fn new(kmax: usize, dmax: u32, lmin: i32, lmax: i32) -> Result<Self> {
        if lmin > lmax {
            return Err(Error::Domain(format!("empty lambda window [{lmin}, {lmax}]")));
        }
        Ok(TruncationSpec { kmax, dmax, lmin, lmax })
    }

    /// The window that holds every term of `Z` and `F` with `deg ≤ dmax` and indices `≤ kmax`.
    ///
    /// A term `∏ t_{a_j}` has `ℓ = Σ (a_j - 1) / 2`, so `ℓ` ranges over
    /// `[-dmax/2, dmax (kmax - 1) / 2]`.
    pub fn z_window(kmax: usize, dmax: u32) -> Self {
        let lmin = -((dmax / 2) as i32);
        let lmax = ((dmax as i64 * (kmax as i64 - 1)).max(0) / 2) as i32;
        TruncationSpec { kmax, dmax, lmin, lmax }
    }

    /// A window restricted to genera `0..=gmax`, i.e. `ℓ ∈ [-1, gmax - 1]`.
    pub fn genus_window(kmax: usize, dmax: u32, gmax: u32) -> Self {
        TruncationSpec { kmax, dmax, lmin: -1, lmax: gmax as i32 - 1 }
    }

    /// True when the monomial satisfies every bound.
    pub fn admits(&self, m: &Monomial) -> bool {
        m.deg <= self.dmax
            && m.l >= self.lmin
            && m.l <= self.lmax
            && m.exps.len() <= self.kmax + 1
    }

    /// Same spec with a different λ-window.
    pub fn with_window(&self, lmin: i32, lmax: i32) -> Self {
        TruncationSpec { lmin, lmax, ..*self }
    }

    /// Same spec with a different degree bound.
    pub fn with_dmax(&self, dmax: u32) -> Self {
        TruncationSpec { dmax, ..*self }
    }

    /// Same spec with a different index bound.
    pub fn with_kmax(&self, kmax: usize) -> Self {
        TruncationSpec { kmax, ..*self }
    }
}

impl fmt::Display for TruncationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(kmax={}, dmax={}, l in [{}, {}])", self.kmax, self.dmax, self.lmin, self.lmax)
    }
}

/// A monomial `λ^{2ℓ} ∏ t_k^{e_k}`.
///
/// The derived ordering compares total degree, then `ℓ`, then the exponent vector
/// lexicographically, which is the canonical order used for serialization.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Monomial {
    deg: u32,
    l: i32,
    exps: Vec<u16>,
}

impl Monomial {
    /// The monomial 1.
    pub fn one() -> Self {
        Monomial { deg: 0, l: 0, exps: Vec::new() }
    }

    /// The pure λ-power `λ^{2l}`.
    pub fn lambda(l: i32) -> Self {
        Monomial { deg: 0, l, exps: Vec::new() }
    }

    /// The variable `t_k`.
    pub fn var(k: usize) -> Self {
        let mut exps = vec![0; k + 1];
        exps[k] = 1;
        Monomial { deg: 1, l: 0, exps }
    }

    /// Builds a monomial from a dense exponent vector.
    pub fn from_dense(exps: &[u16], l: i32) -> Self {
        let mut v = exps.to_vec();
        while v.last() == Some(&0) {
            v.pop();
        }
        let deg = v.iter().map(|&e| e as u32).sum();
        Monomial { deg, l, exps: v }
    }

    /// Builds a monomial from `(index, exponent)` pairs; repeated indices add up.
    pub fn from_sparse(pairs: &[(usize, u32)], l: i32) -> Self {
        let len = pairs.iter().filter(|p| p.1 > 0).map(|p| p.0 + 1).max().unwrap_or(0);
        let mut v = vec![0u16; len];
        for &(i, e) in pairs {
            if e > 0 {
                v[i] += e as u16;
            }
        }
        Monomial::from_dense(&v, l)
    }

    /// Builds a monomial from a list of indices with repetition, e.g. `[0, 0, 2]` is `t_0² t_2`.
    pub fn from_indices(indices: &[usize], l: i32) -> Self {
        let pairs: Vec<(usize, u32)> = indices.iter().map(|&i| (i, 1)).collect();
        Monomial::from_sparse(&pairs, l)
    }

    /// Total t-degree.
    pub fn deg(&self) -> u32 {
        self.deg
    }

    /// The λ²-exponent `ℓ`.
    pub fn l(&self) -> i32 {
        self.l
    }

    /// Dense exponent vector without trailing zeros.
    pub fn exps(&self) -> &[u16] {
        &self.exps
    }

    /// Exponent of `t_k`.
    pub fn exp(&self, k: usize) -> u32 {
        self.exps.get(k).copied().unwrap_or(0) as u32
    }

    /// Largest index with a nonzero exponent.
    pub fn max_index(&self) -> Option<usize> {
        if self.exps.is_empty() {
            None
        } else {
            Some(self.exps.len() - 1)
        }
    }

    /// `(index, exponent)` pairs with positive exponent, ascending by index.
    pub fn sparse(&self) -> Vec<(usize, u32)> {
        self.exps
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(i, &e)| (i, e as u32))
            .collect()
    }

    /// Indices with repetition, ascending.
    pub fn indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.deg as usize);
        for (i, &e) in self.exps.iter().enumerate() {
            for _ in 0..e {
                out.push(i);
            }
        }
        out
    }

    /// Same t-part with a new `ℓ`.
    pub fn with_l(&self, l: i32) -> Self {
        Monomial { l, ..self.clone() }
    }

    /// True when the t-part is empty.
    pub fn is_t_constant(&self) -> bool {
        self.deg == 0
    }

    /// Product of two monomials.
    pub fn mul(&self, other: &Monomial) -> Monomial {
        let (long, short) = if self.exps.len() >= other.exps.len() {
            (&self.exps, &other.exps)
        } else {
            (&other.exps, &self.exps)
        };
        let mut exps = long.clone();
        for (e, s) in exps.iter_mut().zip(short.iter()) {
            *e += *s;
        }
        Monomial { deg: self.deg + other.deg, l: self.l + other.l, exps }
    }

    /// True when the t-part of `self` divides the t-part of `other`.
    pub fn divides(&self, other: &Monomial) -> bool {
        self.exps.len() <= other.exps.len()
            && self.exps.iter().zip(other.exps.iter()).all(|(a, b)| a <= b)
    }

    /// Quotient of t-parts and difference of grades; `None` if `divisor` does not divide.
    pub fn div(&self, divisor: &Monomial) -> Option<Monomial> {
        if !divisor.divides(self) {
            return None;
        }
        let mut exps = self.exps.clone();
        for (e, d) in exps.iter_mut().zip(divisor.exps.iter()) {
            *e -= *d;
        }
        Some(Monomial::from_dense(&exps, self.l - divisor.l))
    }

    /// The edge count `Σ (a_j + 1) / 2` doubled, i.e. the total valence `Σ (a_j + 1)`.
    pub fn valence_sum(&self) -> u32 {
        self.exps.iter().enumerate().map(|(i, &e)| (i as u32 + 1) * e as u32).sum()
    }

    /// The index sum `Σ a_j` of the t-part.
    pub fn index_sum(&self) -> u32 {
        self.exps.iter().enumerate().map(|(i, &e)| i as u32 * e as u32).sum()
    }

    /// Human-readable t-part such as `t_0*t_2^2`, or `1` for the constant.
    pub fn t_string(&self) -> String {
        if self.deg == 0 {
            return "1".to_string();
        }
        self.sparse()
            .iter()
            .map(|&(i, e)| if e == 1 { format!("t_{i}") } else { format!("t_{i}^{e}") })
            .collect::<Vec<_>>()
            .join("*")
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.l == 0 {
            write!(f, "{}", self.t_string())
        } else if self.deg == 0 {
            write!(f, "lambda^{}", 2 * self.l)
        } else {
            write!(f, "{}*lambda^{}", self.t_string(), 2 * self.l)
        }
    }
}
