//! Model, autodiff, losses and the online tracker.

pub mod container;
pub mod error;
pub mod graph;
pub mod nn;
pub mod losses;
pub mod model;
pub mod optim;
pub mod perception;
pub mod prompting;
pub mod params;
pub mod tensor;
pub mod text;
pub mod tracker;
pub mod trackbook;

#[cfg(any(test, feature = "gradcheck"))]
pub mod gradcheck;

pub use error::{Error, Result};
pub use graph::{Graph, Mask, Var};
pub use params::{ParamId, ParamStore, Session};
pub use tensor::Tensor;
