use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};

pub const RMS_DECAY: f64 = 0.9;
pub const RMS_EPS: f64 = 1e-8;

/// RMSprop with heavy-ball momentum:
/// `ms ← ρ ms + (1-ρ) g²`, `v ← μ v - lr g / √(ms + ε)`, `θ ← θ + v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rmsprop {
    #[serde(serialize_with = "crate::json::ser_f64_vec")]
    pub mean_square: Vec<f64>,
    #[serde(serialize_with = "crate::json::ser_f64_vec")]
    pub velocity: Vec<f64>,
    #[serde(serialize_with = "crate::json::ser_f64")]
    pub decay: f64,
    #[serde(serialize_with = "crate::json::ser_f64")]
    pub epsilon: f64,
    #[serde(serialize_with = "crate::json::ser_f64")]
    pub learning_rate: f64,
    #[serde(serialize_with = "crate::json::ser_f64")]
    pub momentum: f64,
}

impl Rmsprop {
    pub fn new(n: usize, learning_rate: f64, momentum: f64) -> Self {
        Self {
            mean_square: vec![0.0; n],
            velocity: vec![0.0; n],
            decay: RMS_DECAY,
            epsilon: RMS_EPS,
            learning_rate,
            momentum,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_dim(self.mean_square.len(), grad.len())?;
        check_dim(self.mean_square.len(), params.len())?;
        for i in 0..grad.len() {
            let g = grad[i];
            let ms = self.decay * self.mean_square[i] + (1.0 - self.decay) * g * g;
            let v = self.momentum * self.velocity[i]
                - self.learning_rate * g / (ms + self.epsilon).sqrt();
            self.mean_square[i] = ms;
            self.velocity[i] = v;
            params[i] += v;
        }
        Ok(())
    }
}
