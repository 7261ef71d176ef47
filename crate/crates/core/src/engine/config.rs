use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Datapoints per update (VAE) or Monte Carlo samples per update (free
    /// variational parameters).
    pub minibatch: usize,
    #[serde(serialize_with = "crate::json::ser_f64")]
    pub learning_rate: f64,
    #[serde(serialize_with = "crate::json::ser_f64")]
    pub momentum: f64,
    #[serde(serialize_with = "crate::json::ser_f64")]
    pub anneal_t0: f64,
    pub anneal_steps: usize,
    pub k: usize,
    pub iters: usize,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            minibatch: 100,
            learning_rate: 1e-5,
            momentum: 0.9,
            anneal_t0: 0.01,
            anneal_steps: 10_000,
            k: 0,
            iters: 30_000,
            seed: 0,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.minibatch == 0 {
            return bad("minibatch must be >= 1".into());
        }
        if !(self.anneal_t0 > 0.0 && self.anneal_t0 <= 1.0) {
            return bad(format!(
                "anneal_t0 must lie in (0, 1], got {}",
                self.anneal_t0
            ));
        }
        if self.anneal_steps == 0 {
            return bad("anneal_steps must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        Ok(())
    }
}

/// Inverse temperature `min(1, t0 + t / steps)`.
pub fn anneal_beta(t: usize, cfg: &TrainConfig) -> f64 {
    (cfg.anneal_t0 + t as f64 / cfg.anneal_steps as f64).min(1.0)
}
