//! Learned per-sample adversarial perturbations for image and video
//! classifiers.

pub mod autodiff;
pub mod cli;
pub mod compression;
mod codec;
pub mod data;
pub mod error;
pub mod models;
pub mod nn;
pub mod optim;
pub mod perturb;
pub mod report;
pub mod tensor;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
