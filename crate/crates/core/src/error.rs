use thiserror::Error;

/// Unified error type for the core library.
#[derive(Debug, Clone, Error)]
pub enum CoreError {
    #[error("index {index} outside defined range [{k_min}, {k_max}]")]
    IndexOutOfRange { index: i64, k_min: i64, k_max: i64 },

    #[error("transition at index {index} is numerically singular (|det| = {det:.3e})")]
    SingularTransition { index: i64, det: f64 },

    #[error("weight must be positive, got {gamma}")]
    NonpositiveWeight { gamma: f64 },

    #[error("unknown builtin name `{name}`")]
    UnknownName { name: String },

    #[error("parameter constraint violated: {message}")]
    ParamConstraintViolated { message: String },

    #[error("invalid window: k_min = {k_min} > k_max = {k_max}")]
    InvalidWindow { k_min: i64, k_max: i64 },

    #[error("window [{k_min}, {k_max}] too short for this operation (need span >= {need})")]
    WindowTooShort { k_min: i64, k_max: i64, need: i64 },

    #[error("non-finite entry in matrix at index {index}")]
    NonFiniteEntry { index: i64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty parameter grid")]
    EmptyGrid,

    #[error("invalid grid: {message}")]
    InvalidGrid { message: String },

    #[error("matrix is not a projector (idempotency residual {residual:.3e})")]
    NotAProjector { residual: f64 },

    #[error("projector family is not invariant along the flow (relative residual {residual:.3e})")]
    ProjectorNotInvariant { residual: f64 },

    #[error("invalid certificate: {message}")]
    InvalidCertificate { message: String },

    #[error("no spectral gap at gamma = {gamma} (split ratio {ratio:.3})")]
    NoSpectralGap { gamma: f64, ratio: f64 },

    #[error("bracket endpoint gamma = {gamma} is not in the resolvent set; {hint}")]
    BracketNotResolvent { gamma: f64, hint: String },

    #[error(
        "stable dimension decreases from {dim_low} at gamma = {gamma_low} to {dim_high} at gamma = {gamma_high}; window likely too short"
    )]
    NonMonotoneDims { gamma_low: f64, gamma_high: f64, dim_low: usize, dim_high: usize },

    #[error("bundle dimensions sum to {total}, ambient dimension is {ambient}")]
    WhitneyFailure { total: usize, ambient: usize },

    #[error("bundles {first} and {second} overlap (principal cosine {cosine})")]
    BundleOverlap { first: usize, second: usize, cosine: f64 },

    #[error("fiber mismatch: indices {left} and {right}")]
    FiberMismatch { left: i64, right: i64 },

    #[error("projector rank {rank} of {dim} admits no nontrivial splitting")]
    RankDegenerate { rank: usize, dim: usize },

    #[error("normalizing basis is ill conditioned (condition number {condition:.3e})")]
    IllConditionedBasis { condition: f64 },

    #[error("gram matrix at index {index} is not positive definite (eigenvalue {eigenvalue:.3e})")]
    IndefiniteGram { index: i64, eigenvalue: f64 },

    #[error("no verified dichotomy certificate available for this projector")]
    CertificateMissing,

    #[error("cut point gamma = {gamma} is not in the resolvent set")]
    CutPointNotResolvent { gamma: f64 },

    #[error("block {block} spectrum mismatch: {message}")]
    BlockSpectrumMismatch { block: usize, message: String },
}

pub type Result<T> = std::result::Result<T, CoreError>;
