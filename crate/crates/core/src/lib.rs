//! Hierarchical Poisson factor analysis topic models with local topics and
//! site/page topic-presence priors, fitted by Gibbs sampling.

pub mod corpus;
pub mod distributions;
pub mod evaluation;
pub mod model;
pub mod sampler;
pub mod synthetic;

pub use corpus::{Corpus, HoldoutSplit};
pub use distributions::RngStream;
pub use model::{ModelConfig, ModelState, Variant};
pub use sampler::PosteriorSamples;
