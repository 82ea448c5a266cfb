//! Crate-wide error type.

use std::fmt;

/// Everything that can go wrong across the numerics, solver, and I/O
/// layers. Solvers that merely fail to reach tolerance do not error;
/// they return a result with `converged == false` so the best iterate
/// and its residual survive. `Error` is reserved for structural
/// failures.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A linear solve met a pivot below the degeneracy threshold.
    SingularMatrix,
    /// An iteration count limit was exceeded where the algorithm has no
    /// meaningful partial answer (e.g. active-set cycling).
    MaxIterations { iters: usize },
    /// Layer normalization was handed a (numerically) constant vector.
    DegenerateInput,
    /// Operand shapes do not line up.
    DimensionMismatch { expected: usize, got: usize, context: &'static str },
    /// Newton hit a Jacobian whose factorization broke down.
    SingularJacobian { iter: usize },
    /// A solve exhausted its budget; carries the best residual seen.
    NotConverged { residual: f64, iters: usize },
    /// Homotopy continuation could not cross some t despite step
    /// shrinking down to the configured minimum.
    PathFailure { t: f64 },
    /// The cubic-map target stayed inside the excluded cone after all
    /// fallbacks.
    ConeDegenerate,
    /// No unreachable-target construction succeeded for this instance.
    WitnessNotFound,
    /// The attention score matrix has no direction with a negative
    /// quadratic form, so the dead-direction construction does not apply.
    NoDeadDirection,
    /// A root-counting run found a root within the boundary margin.
    BoundaryRoot,
    /// A root-counting run found a root with a sign-degenerate Jacobian.
    DegenerateRoot,
    /// The map comes too close to the target on the domain boundary for
    /// root counting to be trustworthy.
    BoundaryValueTooClose { min_dist: f64, needed: f64 },
    /// The linearization at the expansion point is degenerate.
    DegenerateJacobian,
    /// An input value violates a documented precondition.
    InvalidInput(String),
    /// A file could not be parsed; the message carries serde context
    /// (field name, line and column where applicable).
    Parse(String),
    /// Filesystem failure wrapped with the offending path.
    Io(String),
    /// The file declares a schema version this build does not read.
    UnsupportedSchema(u32),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::SingularMatrix => write!(f, "matrix is singular to working precision"),
            Error::MaxIterations { iters } => {
                write!(f, "iteration limit exceeded after {iters} iterations")
            }
            Error::DegenerateInput => {
                write!(f, "layer norm input is constant; direction is undefined")
            }
            Error::DimensionMismatch { expected, got, context } => {
                write!(f, "dimension mismatch in {context}: expected {expected}, got {got}")
            }
            Error::SingularJacobian { iter } => {
                write!(f, "Jacobian factorization broke down at Newton iteration {iter}")
            }
            Error::NotConverged { residual, iters } => {
                write!(f, "did not converge: residual {residual:.3e} after {iters} iterations")
            }
            Error::PathFailure { t } => {
                write!(f, "continuation stalled at t = {t:.6}")
            }
            Error::ConeDegenerate => {
                write!(f, "target persistently inside the excluded cone of the cubic map")
            }
            Error::WitnessNotFound => {
                write!(f, "no certified-unreachable target found for this instance")
            }
            Error::NoDeadDirection => {
                write!(f, "score matrix has no negative direction; witness construction does not apply")
            }
            Error::BoundaryRoot => {
                write!(f, "root found within the boundary margin; domain box is unsafe")
            }
            Error::DegenerateRoot => {
                write!(f, "root with sign-degenerate Jacobian; degree is undefined here")
            }
            Error::BoundaryValueTooClose { min_dist, needed } => {
                write!(
                    f,
                    "map comes within {min_dist:.3e} of the target on the boundary (need > {needed:.3e})"
                )
            }
            Error::DegenerateJacobian => {
                write!(f, "linearization at the expansion point is sign-degenerate")
            }
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
            Error::Io(msg) => write!(f, "io error: {msg}"),
            Error::UnsupportedSchema(v) => {
                write!(f, "unsupported schema_version {v}; this build reads version 1")
            }
        }
    }
}

impl std::error::Error for Error {}
