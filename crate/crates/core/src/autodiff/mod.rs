//! Reverse-mode differentiation core: tensors, the tape, sparse patterns,
//! parameter storage, Adam, and checkpoint I/O.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod params;
pub mod sparse;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use params::{Gradients, ParamId, ParamStore};
pub use sparse::SparsePattern;
pub use tape::{NodeGrads, ParamVars, Tape, Var};
pub use tensor::Tensor;
