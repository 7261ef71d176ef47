//! Densities, likelihoods, test energies and neural networks.

pub mod amortized;
pub mod density;
pub mod energy;
pub mod linear_gaussian;
pub mod mlp;

pub use amortized::{Decoder, DecoderTape, InferenceNet, InferenceTape};
pub use density::{
    bernoulli_loglik, logitnormal_loglik, std_normal_logpdf, DiagGaussian, Likelihood,
};
pub use energy::{energy_normalizer, EnergyFunction, Potential, Quadratic};
pub use linear_gaussian::LinearGaussian;
pub use mlp::{Activation, Dense, Mlp, MlpTape};
