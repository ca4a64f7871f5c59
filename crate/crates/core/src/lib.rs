//! Temporal bilinear networks for clip classification.
//!
//! The crate bundles a small reverse-mode differentiation engine over dense
//! tensors, the temporal operators (pooling, temporal/3-D convolution, frame
//! shift), the factorized temporal bilinear module and its bottleneck block,
//! residual network assembly, complexity auditing, a synthetic order-sensitive
//! video generator, and an SGD trainer with multi-clip evaluation.

pub mod autograd;
pub mod complexity;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod network;
pub mod tb;
pub mod temporal;
pub mod tensor;
pub mod trainer;

pub use autograd::{Graph, ParamId, ParamKind, ParamStore, Var};
pub use complexity::{ComplexityReport, LayerStack};
pub use error::{Error, Result};
pub use network::{Arch, BlockSpec, Model, NetworkConfig};
pub use tb::{FactorWeight, TBConfig};
pub use tensor::{ClipDims, DType, Scalar, Tensor};
