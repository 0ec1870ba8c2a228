//! Small dense-tensor engine used by the treatment-effect models.
//!
//! Everything is `f64` and two-dimensional. Gradients come from a
//! define-by-run [`Tape`]; parameters live outside the tape and are
//! updated with [`AdamState`].

mod adam;
mod init;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use init::kaiming_uniform;
pub use tape::{sigmoid, softplus, sq_dist, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("tensor dimensions must be positive, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("row {row} has {found} values, expected {expected}")]
    RaggedRows {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row index {index} out of range for {rows} rows")]
    RowIndex { index: usize, rows: usize },
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: [usize; 2] },
    #[error("{op} undefined at {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("{params} parameters but {grads} gradients or moment buffers")]
    ParamCount { params: usize, grads: usize },
}
