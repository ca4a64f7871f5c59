//! Tape-based reverse-mode differentiation.

pub mod conv;
mod graph;
pub mod ops;
mod params;

pub use graph::{Backward, BackwardCtx, Graph, Var};
pub use params::{Buffer, BufferId, Param, ParamId, ParamKind, ParamStore};
