use thiserror::Error;

/// Errors produced by pairlab operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("operation requires a circular-boundary grid: {0}")]
    BoundaryMismatch(String),

    #[error("all-zero input: {0}")]
    ZeroInput(String),

    #[error("sign(g) undefined: g has a zero entry at flat index {index}; perturb the field before constructing the solution")]
    SignUndefined { index: usize },

    #[error("symbol constraint f(k)f(-k)=1 violated: worst |f(k)f(-k)-1| = {worst:.3e} at k = ({k0}, {k1}), tolerance {tol:.1e}")]
    SymbolConstraint { worst: f64, k0: usize, k1: usize, tol: f64 },

    #[error("grid too large for direct-sum evaluation: n = {n}, limit n <= {max}")]
    GridTooLarge { n: usize, max: usize },

    #[error("wrong basis: expected {expected}, got {got}")]
    WrongBasis { expected: &'static str, got: &'static str },

    #[error("rank-deficient fit design: {0}")]
    RankDeficient(String),

    #[error("zero-variance input to correlation score")]
    ZeroVariance,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
