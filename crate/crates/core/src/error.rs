use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A configuration violates its own invariants, or an input does not
    /// match the configured resolution.
    #[error("configuration error: {0}")]
    Config(String),
    /// Parameters disagree with the shapes implied by the configuration.
    #[error("shape audit failed: {0}")]
    ShapeAudit(String),
    /// Operands of an operation have incompatible shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A scalar argument lies outside its domain.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("tuple stream error: {0}")]
    Stream(String),
    /// The model has (or lacks) a time branch where the opposite is required.
    #[error("model kind mismatch: {0}")]
    ModelKind(String),
    /// Loss or gradient became non-finite.
    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: u64, reason: String },
    /// The groundtruth has no detected edges, so its mask is empty and the
    /// sample cannot be scored.
    #[error("empty evaluation mask: no edges detected in the groundtruth")]
    EmptyMask,
    #[error("evaluation error: {0}")]
    Evaluation(String),
}
