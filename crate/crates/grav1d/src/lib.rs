//! Exact-arithmetic engine for topological 1D gravity.
//!
//! The crate computes the partition function `Z`, the free energy `F`, correlators,
//! the I-coordinates, Feynman diagram sums, Virasoro-type constraints, n-point
//! functions and the quantized spectral curve, all as truncated formal power series
//! with rational coefficients.
//!
//! Every series lives in [`series_core`]. The remaining modules build on it:
//!
//! * [`partition`]: closed-form `Z`, `F = log Z`, correlators and restricted forms.
//! * [`icoords`]: the triangular coordinate change `t <-> I` and related identities.
//! * [`graphs`]: Feynman diagram enumeration with half-edge automorphism counts.
//! * [`constraints`]: differential operators, flow/polymer equations, Virasoro families.
//! * [`npoint`]: loop operators and the two families of n-point functions.
//! * [`spectral`]: the special deformation of the spectral curve and its quantization.

pub mod combinat;
pub mod constraints;
pub mod error;
pub mod graphs;
pub mod icoords;
pub mod npoint;
pub mod par;
pub mod partition;
pub mod report;
pub mod series_core;
pub mod spectral;

pub use error::{Error, Result};
pub use report::{Check, Report};
pub use series_core::{Monomial, OuterSeries, Rational, Series, Slot, TruncationSpec};
