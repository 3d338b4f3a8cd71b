//! Small denoising diffusion models on 2-D synthetic distributions, with a
//! pluggable structural penalty on the noise predictions, an ancestral
//! sampler, and k-NN manifold metrics (precision / recall / density /
//! coverage) for judging sample quality.

pub mod checkpoint;
pub mod dataset;
pub mod density;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod moments;
pub mod net;
pub mod optim;
pub mod points;
pub mod prdc;
pub mod regularizer;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
