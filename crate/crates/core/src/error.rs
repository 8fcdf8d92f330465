//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),

    #[error("arity mismatch for `{name}`: declared {declared}, applied to {given}")]
    Arity {
        name: String,
        declared: usize,
        given: usize,
    },

    #[error("duplicate equation for `{0}`")]
    DuplicateEquation(String),

    #[error("missing equation for `{0}`")]
    MissingEquation(String),

    #[error("variable lists differ: {0:?} vs {1:?}")]
    VariableMismatch(Vec<String>, Vec<String>),

    #[error("component length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("division by zero expression")]
    ZeroDivisor,

    #[error("expression is not polynomial in the declared variables: {0}")]
    NonPolynomial(String),

    #[error("parameter `{0}` has no declared value")]
    UnvaluedParameter(String),

    #[error("unbound symbol `{0}` in numeric evaluation")]
    UnboundSymbol(String),

    #[error("numeric domain error: {0}")]
    Domain(String),

    #[error("coordinate map is not invertible: {0}")]
    NonInvertibleMap(String),

    #[error("chart is inconsistent with the generators: residual {0}")]
    ChartInconsistent(String),

    #[error("right-hand side vanishes identically; no collinearity direction")]
    ZeroField,

    #[error("manifold is not invariant under the system")]
    NotInvariant,

    #[error("field is not tangent to the manifold: residual {0}")]
    NotTangent(String),

    #[error("tangency refinement hit the iteration cap ({0} rounds)")]
    IterationCap(usize),

    #[error("linear part is not block-diagonal with respect to the requested split")]
    NotBlockDiagonal,

    #[error("center block has an eigenvalue off the imaginary axis: {0}")]
    CenterSpectrum(String),

    #[error("order-{0} linear system for the graph coefficients is singular")]
    SingularOrder(u32),

    #[error("nonlinear terms contain constant or linear parts")]
    BadNonlinearPart,

    #[error("fixed point condition fails at parameter {0}: |f| = {1:e}")]
    NotFixedForParameter(f64, f64),

    #[error("no eigenvalue crossing inside the parameter interval")]
    NoCrossing,

    #[error("integration step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("tolerance {0:e} outside the supported range [1e-12, 1e-3]")]
    BadTolerance(f64),

    #[error("no seed points found on the manifold")]
    NoSeeds,

    #[error("{0}")]
    Invalid(String),
}
