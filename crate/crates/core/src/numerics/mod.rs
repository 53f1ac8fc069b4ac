//! Dense tensors, segment reductions, MLPs and reverse-mode gradients.

pub mod gradcheck;
pub mod mlp;
pub mod params;
pub mod scalar;
pub mod segment;
pub mod tape;
pub mod tensor;

pub use mlp::{mlp_forward, MlpSpec, LEAKY_SLOPE};
pub use params::ParamStore;
pub use scalar::Scalar;
pub use segment::{segment_reduce, Reduce};
pub use tape::{CustomOp, Tape, Var};
pub use tensor::Tensor;
