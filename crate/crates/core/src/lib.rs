//! Ghost-module CNN with decoupled fully-connected attention, built from
//! scratch on a small tape-based autograd, plus the data, loss, metric and
//! training plumbing needed to run it on lesion images.

pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod dfc;
mod error;
pub mod flops;
pub mod ghost;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
