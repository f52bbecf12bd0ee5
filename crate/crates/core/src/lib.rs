//! Domain separation networks on a small reverse-mode autodiff engine.
//!
//! The numeric core ([`tensor`], [`autodiff`], [`layers`], [`losses`],
//! [`model`], [`trainer`]) is generic over [`Real`]; the aliases below fix
//! the scalar to `f64`, which is what training and gradient checking use.

pub mod autodiff;
pub mod error;
pub mod gradcheck;
mod kernels;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use kernels::Padding;
pub use scalar::Real;

pub type Tensor = tensor::Tensor<f64>;
pub type Graph = autodiff::Graph<f64>;
pub type GradientMap = autodiff::GradientMap<f64>;
pub use autodiff::Var;
pub mod checkpoint;
pub mod data;
pub mod layers;
pub mod losses;
pub mod model;
pub mod oracle;
