use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors reported by the library.
///
/// Numerical diagnostics are carried along so callers can decide whether a
/// failure is structural (wrong input) or a tolerance issue (refine and retry).
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("matrix is not invertible: min singular value {sigma_min:.3e} <= tol {tol:.3e}")]
    NotInvertible { sigma_min: f64, tol: f64 },

    #[error("eigenvalue of modulus {modulus:.12} lies within {tol:.3e} of the unit circle")]
    HyperbolicityViolation { modulus: f64, tol: f64 },

    #[error("matrix dimension {n} exceeds the supported maximum {max}")]
    DimensionTooLarge { n: usize, max: usize },

    #[error("matrix has a non-finite entry at ({row}, {col})")]
    NonFiniteEntry { row: usize, col: usize },

    #[error("mesh resolution {m} is below the minimum of {min}")]
    MeshTooCoarse { m: usize, min: usize },

    #[error("loop index {index} out of range: mesh has {count} generator loops")]
    BadLoopIndex { index: usize, count: usize },

    #[error("refinement factor {0} is not one of 2, 4, 8, 16")]
    BadRefineFactor(usize),

    #[error("frame overlap quality {quality:.4} below 0.5; mesh too coarse")]
    FramesNotAdjacent { quality: f64 },

    #[error("loop {loop_index} holonomy still unresolved after {max_factor}x refinement")]
    MeshUnresolvable { loop_index: usize, max_factor: usize },

    #[error("stable rank jumps from {expected} to {found} at mesh vertex {vertex}")]
    RankDiscontinuity { expected: usize, found: usize, vertex: usize },

    #[error("stable ranks differ between the two bundles: {plus} vs {minus}")]
    RankMismatch { plus: usize, minus: usize },

    #[error("bundles are not comparable: {0}")]
    BundleMismatch(String),

    #[error("window half-length {m} is smaller than the decay probe index {decay_probe}")]
    WindowTooSmall { m: usize, decay_probe: usize },

    #[error("Newton did not converge in {max_iter} iterations; last residual {residual:.3e}")]
    NoConvergence { max_iter: usize, residual: f64 },

    #[error("Jacobian numerically singular mid-iteration (sigma_min {sigma_min:.3e})")]
    SingularJacobian { sigma_min: f64 },

    #[error("kernel is empty; no seed direction available")]
    EmptyKernel,

    #[error("bad stable ranks: k_plus={k_plus}, k_minus={k_minus} for dimension {n}")]
    BadRanks { k_plus: usize, k_minus: usize, n: usize },

    #[error("family evaluator failed: {0}")]
    EvaluatorFailure(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}
