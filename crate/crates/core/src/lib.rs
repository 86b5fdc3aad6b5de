//! Single-image deraining with a gradient-guided RASPP generator and
//! adversarial training, implemented from first principles on the CPU.
//!
//! The crate is layered bottom-up: [`tensor`] and [`ops`] provide the
//! differentiable primitives, [`autograd`] records them on a tape,
//! [`model`] builds the networks, [`losses`] and [`metrics`] score them,
//! [`data`] feeds them and [`train`] optimises them. [`cli`] wires it all
//! to the `graspp` binary.

pub mod autograd;
pub mod checks;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod train;

pub use error::{CheckpointError, Error, Result};
pub use tensor::{Float, Shape, Tensor};
