use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible matrix shapes. Always names both operands.
    #[error("{op}: shapes {lhs_rows}x{lhs_cols} and {rhs_rows}x{rhs_cols} are incompatible")]
    Shape {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    /// Non-finite value where a finite one is required.
    #[error("numeric error in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },

    /// A feature block the provider cannot supply.
    #[error("missing feature: episode '{episode_id}', phase '{phase}', source '{source_id}'")]
    MissingFeature {
        episode_id: String,
        phase: String,
        source_id: String,
    },

    /// A caption (or its embedding) is absent for an episode phase.
    #[error("missing caption for episode '{episode_id}', phase '{phase}'")]
    MissingCaption { episode_id: String, phase: String },

    /// Every representation group was empty.
    #[error("empty representation: no scene, aligned, or narrative blocks")]
    EmptyRepresentation,

    /// Attention was asked to attend over zero keys.
    #[error("empty keys in {0}: the key/value sequence has no rows")]
    EmptyKeys(&'static str),

    /// Invalid configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Manifest parse or validation failure, with the offending line.
    #[error("manifest error at line {line}: {detail}")]
    Manifest { line: usize, detail: String },

    /// Malformed binary file (feature block or checkpoint).
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    /// Remote embedding service failure after retries.
    #[error("remote provider error: {0}")]
    Remote(String),

    /// Training aborted on a non-finite loss.
    #[error(
        "training diverged at epoch {epoch}, batch {batch}: loss {loss}, parameter norm {param_norm}"
    )]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
        param_norm: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Error::Shape {
            op,
            lhs_rows: lhs.0,
            lhs_cols: lhs.1,
            rhs_rows: rhs.0,
            rhs_cols: rhs.1,
        }
    }

    pub(crate) fn numeric(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Numeric {
            op,
            detail: detail.into(),
        }
    }
}
