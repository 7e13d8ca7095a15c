//! Tensor storage, differentiability, gradient checking, and binary tensor I/O.
//!
//! Storage is always 32-bit float ([`tensor::Tensor`]); the autodiff tape
//! ([`graph::Graph`]) lifts values to f64 while a computation is live so that
//! central-difference gradient checks at epsilon 1e-4 stay meaningful, and
//! rounds back to f32 at every storage boundary (checkpoints, datasets,
//! exported embeddings).

pub mod container;
pub mod gradcheck;
pub mod graph;
pub mod rng;
pub mod similarity;
pub mod tensor;

pub use container::{load_tensors, save_tensors};
pub use gradcheck::{finite_difference_gradcheck, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use similarity::cosine_similarity;
pub use tensor::Tensor;
