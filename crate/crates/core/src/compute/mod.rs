//! Dense f64 matrices, reverse-mode differentiation and the parameter,
//! optimizer and checkpoint plumbing built on top of them.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod layers;
mod optim;
mod param;
mod tensor;

pub use checkpoint::Checkpoint;
pub use graph::{logsumexp, Gradients, Graph, KeyRange, Var};
pub use optim::AdamW;
pub use param::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor2D;

