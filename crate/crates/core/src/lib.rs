//! Symbolic-numeric engine for the entropy-principle closure of the
//! 14-moment dense-gas model: exact symmetric-tensor algebra, a Laurent
//! coefficient ring with abstract antiderivative symbols, graded truncated
//! expansions of the generating potentials, the recurrence family of
//! expansion coefficients, explicit solution builders, closure-flux
//! extraction with an order-by-order symmetry profile, and the Galilean
//! boost machinery — all generic over the scalar type, so every identity
//! can be checked in exact rational arithmetic and re-checked in floats.

#![allow(clippy::needless_range_loop)]

pub mod closure;
pub mod dense;
pub mod galilean;
pub mod json;
pub mod recurrence;
pub mod ring;
pub mod scalar;
pub mod series;
pub mod solutions;
pub mod symtensor;
pub mod verify;

/// Exact rational scalar (the default mode).
pub type Rational = num_rational::BigRational;

pub type RationalTensor = symtensor::SymTensor<Rational>;
pub type RationalSeries = series::MomentSeries<Rational>;
pub type RationalTheta = recurrence::ThetaTable<Rational>;

pub type F64Tensor = symtensor::SymTensor<f64>;
pub type F64Series = series::MomentSeries<f64>;
pub type F64Theta = recurrence::ThetaTable<f64>;
