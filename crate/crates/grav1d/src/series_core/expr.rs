use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_traits::{One, Zero};

use super::{fmt_rational, Monomial, Rational, Series, TruncationSpec};
use crate::error::{Error, Result};

/// An abstract formula over named symbols, evaluated by binding each symbol to a series.
///
/// The reciprocal and logarithm nodes only accept arguments without a t-constant part,
/// so their expansions terminate under truncation.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    /// A rational constant.
    Const(Rational),
    /// A named symbol such as `I_2`.
    Sym(String),
    /// The factor `λ^{2ℓ}`.
    Lambda(i32),
    /// A sum of subexpressions.
    Add(Vec<Expr>),
    /// A product of subexpressions.
    Mul(Vec<Expr>),
    /// A non-negative integer power.
    Pow(Box<Expr>, u32),
    /// `(1 - e)^{-p}`.
    InvOneMinus(Box<Expr>, u32),
    /// `log 1/(1 - e)`.
    LogInvOneMinus(Box<Expr>),
}

impl Expr {
    /// A symbol.
    pub fn sym(name: &str) -> Expr {
        Expr::Sym(name.to_string())
    }

    /// A rational constant.
    pub fn c(r: Rational) -> Expr {
        Expr::Const(r)
    }

    /// `e^n`.
    pub fn pow(e: Expr, n: u32) -> Expr {
        Expr::Pow(Box::new(e), n)
    }

    /// `(1 - e)^{-p}`.
    pub fn inv_one_minus(e: Expr, p: u32) -> Expr {
        Expr::InvOneMinus(Box::new(e), p)
    }

    /// `log 1/(1 - e)`.
    pub fn log_inv_one_minus(e: Expr) -> Expr {
        Expr::LogInvOneMinus(Box::new(e))
    }

    /// Every symbol occurring in the formula.
    pub fn symbols(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Sym(s) => {
                out.insert(s.clone());
            }
            Expr::Add(v) | Expr::Mul(v) => v.iter().for_each(|e| e.collect_symbols(out)),
            Expr::Pow(e, _) | Expr::InvOneMinus(e, _) | Expr::LogInvOneMinus(e) => {
                e.collect_symbols(out)
            }
            Expr::Const(_) | Expr::Lambda(_) => {}
        }
    }

    /// Evaluates the formula with every symbol replaced by its bound series.
    pub fn eval(&self, bindings: &BTreeMap<String, Series>, spec: TruncationSpec) -> Result<Series> {
        match self {
            Expr::Const(c) => Ok(Series::constant(spec, c.clone())),
            Expr::Lambda(l) => Ok(Series::monomial(spec, Monomial::lambda(*l), Rational::one())),
            Expr::Sym(s) => match bindings.get(s) {
                Some(v) if v.spec() == spec => Ok(v.clone()),
                Some(v) => Err(Error::SpecMismatch(spec.to_string(), v.spec().to_string())),
                None => Err(Error::UnboundSymbol(s.clone())),
            },
            Expr::Add(v) => {
                let mut acc = Series::zero(spec);
                for e in v {
                    acc = &acc + &e.eval(bindings, spec)?;
                }
                Ok(acc)
            }
            Expr::Mul(v) => {
                let mut acc = Series::one(spec);
                for e in v {
                    acc = &acc * &e.eval(bindings, spec)?;
                }
                Ok(acc)
            }
            Expr::Pow(e, n) => Ok(e.eval(bindings, spec)?.pow(*n)),
            Expr::InvOneMinus(e, p) => {
                let x = nilpotent_arg(e, bindings, spec)?;
                let inv = (&Series::one(spec) - &x).invert_unit()?;
                Ok(inv.pow(*p))
            }
            Expr::LogInvOneMinus(e) => {
                let x = nilpotent_arg(e, bindings, spec)?;
                Ok(-(&Series::one(spec) - &x).log()?)
            }
        }
    }
}

fn nilpotent_arg(e: &Expr, bindings: &BTreeMap<String, Series>, spec: TruncationSpec) -> Result<Series> {
    let x = e.eval(bindings, spec)?;
    if x.terms().any(|(m, _)| m.is_t_constant()) {
        return Err(Error::NonNilpotent(e.to_string()));
    }
    Ok(x)
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{}", fmt_rational(c)),
            Expr::Sym(s) => write!(f, "{s}"),
            Expr::Lambda(l) => write!(f, "lambda^{}", 2 * l),
            Expr::Add(v) => {
                if v.is_empty() {
                    return write!(f, "0");
                }
                let parts: Vec<String> = v.iter().map(|e| e.to_string()).collect();
                write!(f, "({})", parts.join(" + "))
            }
            Expr::Mul(v) => {
                if v.is_empty() {
                    return write!(f, "1");
                }
                let parts: Vec<String> = v.iter().map(|e| e.to_string()).collect();
                write!(f, "{}", parts.join("*"))
            }
            Expr::Pow(e, n) => write!(f, "{e}^{n}"),
            Expr::InvOneMinus(e, p) => write!(f, "(1 - {e})^-{p}"),
            Expr::LogInvOneMinus(e) => write!(f, "log(1/(1 - {e}))"),
        }
    }
}

impl Expr {
    /// True when the formula is the constant zero after trivial folding.
    pub fn is_trivially_zero(&self) -> bool {
        match self {
            Expr::Const(c) => c.is_zero(),
            Expr::Add(v) => v.iter().all(|e| e.is_trivially_zero()),
            Expr::Mul(v) => v.iter().any(|e| e.is_trivially_zero()),
            _ => false,
        }
    }
}
