//! Truncated multivariate formal power series with exact rational coefficients.
//!
//! A [`Series`] is a sparse polynomial in the couplings `t_0..t_K` whose terms also
//! carry an integer grade `ℓ` standing for `λ^{2ℓ}`. Every operation re-truncates to
//! the series' [`TruncationSpec`]. An [`OuterSeries`] adds auxiliary slot variables
//! (`z_i^{-1}` or `w_i`) whose coefficients are series.

mod expr;
mod json;
mod monomial;
mod outer;
mod series;

pub use expr::Expr;
pub use monomial::{Monomial, TruncationSpec};
pub use outer::{OuterSeries, Slot};
pub use series::Series;

use num_bigint::BigInt;
use num_traits::{One, Zero};

use crate::error::{Error, Result};

/// Arbitrary-precision exact fraction, always kept in lowest terms.
pub type Rational = num_rational::BigRational;

/// Formats a rational as `num/den`, including a denominator of 1.
pub fn fmt_rational(r: &Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Parses `num/den` or a bare integer.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let (n, d) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s, "1"),
    };
    let n: BigInt = n.parse().map_err(|_| Error::Parse(format!("bad numerator in {s:?}")))?;
    let d: BigInt = d.parse().map_err(|_| Error::Parse(format!("bad denominator in {s:?}")))?;
    if d.is_zero() {
        return Err(Error::Parse(format!("zero denominator in {s:?}")));
    }
    Ok(Rational::new(n, d))
}

/// The rational one.
pub fn one() -> Rational {
    Rational::one()
}
