pub mod autodiff;
pub mod data;
pub mod error;
pub mod flow;
pub mod gradcheck;
pub mod inference;
pub mod models;
pub mod nn;
pub mod tensor;
pub mod training;

#[cfg(test)]
mod testutil;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{DType, Scalar, Tensor};
