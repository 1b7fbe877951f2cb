//! Deep Dirichlet relational model for link prediction on sparse graphs.
//!
//! The model stacks Dirichlet-distributed community memberships over L
//! layers, propagating concentration along observed edges, and explains
//! binary links through latent Poisson counts with a community
//! compatibility matrix. Inference is a collapsed Gibbs sampler whose cost
//! per sweep scales with the number of positive links, not with N^2.

pub mod countprop;
pub mod dataio;
pub mod error;
pub mod geweke;
pub mod gibbs;
pub mod model;
pub mod par;
pub mod predictor;
pub mod randkit;
pub mod runner;
pub mod synthgen;

pub use dataio::RunConfig;
pub use error::{Result, SdremError};
pub use model::{FeatureMatrix, HyperParams, Mode, ModelState, PosteriorTrace, SparseGraph};
pub use predictor::EvalResult;
pub use randkit::RngStream;
pub use runner::{run_fit, FitOutcome};
