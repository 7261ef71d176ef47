//! Free-energy objective, gradients, optimizer, training loop and evaluation.

pub mod checkpoint;
pub mod config;
pub mod elbo;
pub mod eval;
pub mod model;
pub mod optim;
pub mod setup;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{anneal_beta, TrainConfig};
pub use elbo::{
    draw_batch, elbo_backward, elbo_estimate, elbo_with_gradient, Draw, ElboEstimate, SampleTerms,
};
pub use eval::{
    dataset_eval, grid_values, is_marginal_loglik, kl_to_energy, log_qk, DatasetEval, KlEstimate,
};
pub use model::{Model, Registry, Span, Target, Variational};
pub use optim::Rmsprop;
pub use setup::{free_model, vae_model, VaeSpec};
pub use train::{train, MetricRow, TrainOptions, TrainState};
