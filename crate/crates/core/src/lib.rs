//! symflow-core: symbolic and numeric symmetry analysis for autonomous
//! dynamical systems.
//!
//! The crate is organized around an exact symbolic scalar type
//! ([`symcore::Expression`]) and a sparse rational polynomial type
//! ([`symcore::Polynomial`]). On top of those sit vector fields and their
//! brackets ([`fields`]), symmetry classification and determining-equation
//! search ([`symmetry`]), Darboux polynomials, invariant manifolds and
//! conditional/partial symmetry classification ([`invariants`]), local
//! fixed-point machinery including center-manifold series ([`localgeom`]),
//! and a numeric verification layer ([`numeric`]).
//!
//! All symbolic paths use arbitrary-precision rational arithmetic; floats
//! appear only in the numeric layer and in spectral diagnostics.

pub mod error;
pub mod fields;
pub mod invariants;
pub mod linalg;
pub mod localgeom;
pub mod numeric;
pub mod par;
pub mod parser;
pub mod symcore;
pub mod symmetry;

pub use error::{Error, Result};
pub use symcore::{Expression, Polynomial, Rat};
