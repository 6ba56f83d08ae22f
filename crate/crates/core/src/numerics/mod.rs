//! Minimal numeric runtime: dense f32 tensors, a reverse-mode autodiff
//! graph over a fixed operation set, and an Adam optimizer.
//!
//! Everything is f32, row-major and single-threaded; given identical seeds
//! the forward and backward passes are bitwise reproducible.

mod adam;
mod graph;
mod tensor;

pub use adam::Adam;
pub use graph::{Graph, NodeId};
pub use tensor::{kaiming_uniform, randn, Tensor};
