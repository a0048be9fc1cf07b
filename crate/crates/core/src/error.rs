//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid model/config construction (caught before any computation).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Shape disagreement between weights, spec, or data.
    #[error("dimension mismatch at layer {layer}: {detail}")]
    DimensionMismatch { layer: usize, detail: String },

    /// A forward/backward pass produced NaN or Inf.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Training loss blew past the divergence guard.
    #[error("training diverged at step {step} (loss {loss:.3e})")]
    Diverged { step: u64, loss: f64 },

    /// An operation that needs at least one checkpoint got none.
    #[error("empty checkpoint stream")]
    EmptyStream,

    /// A binary mask selected nothing.
    #[error("degenerate mask: no checkpoint selected")]
    DegenerateMask,

    /// Mask/window length disagreement.
    #[error("mask length {mask} does not match window length {window}")]
    MaskLength { mask: usize, window: usize },

    /// Selection budget larger than the window.
    #[error("budget K={budget} exceeds window length k={window}")]
    BudgetTooLarge { budget: usize, window: usize },

    /// Checkpoint file did not start with the expected magic bytes.
    #[error("{path}: bad magic bytes (expected SEWACKPT)")]
    BadMagic { path: String },

    /// Checkpoint file or manifest has an unsupported version.
    #[error("{path}: unsupported format version {version}")]
    BadVersion { path: String, version: u32 },

    /// Checkpoint file ended before the declared payload.
    #[error("{path}: truncated (expected {expected} bytes of payload, found {found})")]
    Truncated {
        path: String,
        expected: usize,
        found: usize,
    },

    /// Checkpoint payload disagrees with the manifest.
    #[error("{path}: {detail}")]
    ManifestMismatch { path: String, detail: String },

    /// Exhaustive mask enumeration refused: 2^k terms is too many.
    #[error("enumeration over 2^{k} masks refused (limit k <= {limit})")]
    EnumerationTooLarge { k: usize, limit: usize },

    /// The clamped box [eps, 1-eps]^k cannot satisfy the L1 budget.
    #[error("infeasible projection: k*eps = {floor:.3e} exceeds budget K = {budget}")]
    InfeasibleProjection { floor: f64, budget: f64 },

    /// Closed-form bound overflowed in an intermediate term.
    #[error("bound evaluation overflowed in term {term}")]
    BoundOverflow { term: String },

    /// Coupled probe started from identical points.
    #[error("probe requires distinct starting points (zero initial separation)")]
    ZeroSeparation,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether this error is a configuration problem (as opposed to a
    /// failure that happened while running). The CLI maps this to exit
    /// code 1 vs 2.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::MaskLength { .. }
                | Error::BudgetTooLarge { .. }
                | Error::EnumerationTooLarge { .. }
                | Error::InfeasibleProjection { .. }
        )
    }
}
