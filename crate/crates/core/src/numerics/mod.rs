//! Dense tensors, reverse-mode differentiation, and masked attention.

mod attention;
mod gradcheck;
mod graph;
mod params;
mod scalar;
mod tensor;

pub use attention::{masked_attention, masked_attention_heads, AttentionMask, AttentionOutput};
pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, Var};
pub use params::{Param, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}
