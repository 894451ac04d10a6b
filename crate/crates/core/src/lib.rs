//! Auditing toolkit for decoder-based generative models.
//!
//! The crate treats a generator `G: z -> x` with a standard-normal prior as
//! both a manifold (projection distance) and, under additive Gaussian
//! observation noise, a density (annealed importance sampling). Every
//! estimator has an independent closed-form or quadrature counterpart for
//! linear, constant and one-dimensional decoders.

pub mod ais;
pub mod analysis;
pub mod autodiff;
pub mod density;
mod error;
pub mod inference;
pub mod io;
pub mod models;
pub mod projection;
pub mod rng;
pub mod typicality;

pub use autodiff::Tensor;
pub use error::{Error, Result};
pub use models::{GeneratorModel, LatentPrior, ModelKind};
