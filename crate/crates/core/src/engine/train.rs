use std::time::Instant;

use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::math::Rng;

use super::config::{anneal_beta, TrainConfig};
use super::elbo::{draw_batch, elbo_with_gradient, ElboEstimate};
use super::model::Model;
use super::optim::Rmsprop;

/// RNG stream for parameter initialization.
pub const STREAM_INIT: u64 = 1;
/// RNG stream for training noise and minibatch selection.
pub const STREAM_TRAIN: u64 = 2;
/// RNG stream for post-training evaluation.
pub const STREAM_EVAL: u64 = 3;

#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: Rmsprop,
    pub rng: Rng,
    pub t: usize,
}

impl TrainState {
    pub fn new(config: TrainConfig, model: Model) -> Result<Self> {
        config.validate()?;
        let optimizer = Rmsprop::new(model.num_params(), config.learning_rate, config.momentum);
        let rng = Rng::with_stream(config.seed, STREAM_TRAIN);
        Ok(Self {
            config,
            model,
            optimizer,
            rng,
            t: 0,
        })
    }
}

/// One row of the metrics stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub t: usize,
    pub beta_t: f64,
    pub free_energy: f64,
    pub entropy_q0: f64,
    pub neg_sum_logdet: f64,
    pub neg_logp: f64,
    pub wallclock_ms: u64,
}

impl MetricRow {
    fn new(t: usize, e: &ElboEstimate, wallclock_ms: u64) -> Self {
        Self {
            t,
            beta_t: e.beta_t,
            free_energy: e.free_energy,
            entropy_q0: e.entropy_q0,
            neg_sum_logdet: e.neg_sum_logdet,
            neg_logp: e.neg_logp,
            wallclock_ms,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOptions {
    /// Record elapsed time in `wallclock_ms`; left at zero otherwise so that
    /// metric files are reproducible byte for byte.
    pub wallclock: bool,
}

/// Runs updates until `state.t == config.iters`, calling `on_row` at every
/// `eval_every`-th step and at the last one. On a non-finite estimate or
/// gradient the error is returned and `state` holds the last good parameters.
pub fn train(
    state: &mut TrainState,
    data: Option<&Dataset>,
    options: TrainOptions,
    mut on_row: impl FnMut(&MetricRow),
) -> Result<Vec<MetricRow>> {
    let cfg = state.config.clone();
    let needs_data = state.model.target.needs_data();
    if needs_data != data.is_some() {
        return Err(Error::InvalidArgument(if needs_data {
            "this model needs a dataset".into()
        } else {
            "this model takes no dataset".into()
        }));
    }
    if let (Some(ds), crate::engine::model::Variational::Amortized(net)) =
        (data, &state.model.variational)
    {
        check_dim(net.data_dim(), ds.d())?;
    }
    let start = Instant::now();
    let latent = state.model.latent_dim();
    let mut rows = Vec::new();
    let mut params = state.model.params();
    while state.t < cfg.iters {
        let t = state.t;
        let beta = anneal_beta(t, &cfg);
        let draws = draw_batch(latent, data, cfg.minibatch, &mut state.rng)?;
        let (est, grad) = elbo_with_gradient(&state.model, &draws, beta)?;
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("gradient entry {i} at step {t}"),
                sample: None,
            });
        }
        let mut next = params.clone();
        let mut opt = state.optimizer.clone();
        opt.step(&mut next, &grad)?;
        if let Some(i) = next.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("parameter {i} after step {t}"),
                sample: None,
            });
        }
        state.model.set_params(&next)?;
        state.optimizer = opt;
        params = next;
        state.t += 1;
        if t.is_multiple_of(cfg.eval_every) || state.t == cfg.iters {
            let ms = if options.wallclock {
                start.elapsed().as_millis() as u64
            } else {
                0
            };
            let row = MetricRow::new(t, &est, ms);
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}
