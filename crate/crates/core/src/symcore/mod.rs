//! Exact symbolic scalars and sparse rational polynomials.
//!
//! [`Expression`] is the general scalar: a canonical sum of Laurent
//! monomials over opaque atoms (variables, parameters, `exp` atoms and
//! formal function applications), divided by a product of monic multi-term
//! sum bases. Every constructor returns a normalized value, so structural
//! equality is semantic equality within the supported grammar (rational
//! function equality is canonical up to factorization of denominator
//! bases, which we do not attempt).
//!
//! [`Polynomial`] is the restricted carrier used by all determining-equation
//! and Darboux machinery: a sparse map from exponent multi-indices to exact
//! rationals over a fixed variable list.

mod expr;
mod poly;

pub use expr::{Atom, EvalCtx, Expression, FuncAtom, FuncImpl, Monomial, FD_STEP};
pub use poly::{monomials_in_degrees, Expo, Polynomial};

use num::BigRational;

/// Exact rational scalar used everywhere in the symbolic layer.
pub type Rat = BigRational;

/// Shorthand for a rational from a numerator/denominator pair.
pub fn rat(num: i64, den: i64) -> Rat {
    Rat::new(num.into(), den.into())
}

/// Shorthand for an integer rational.
pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(n.into())
}
