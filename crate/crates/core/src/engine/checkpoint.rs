use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flows::LayerRecord;
use crate::math::{Rng, RngState};

use super::model::{Registry, Variational};
use super::optim::Rmsprop;
use super::train::TrainState;

/// Everything needed to resume training: the caller's configuration, the
/// parameter layout and values, optimizer accumulators, RNG state and step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    #[serde(serialize_with = "crate::json::ser_value")]
    pub config: serde_json::Value,
    pub registry: Registry,
    #[serde(serialize_with = "crate::json::ser_f64_vec")]
    pub params: Vec<f64>,
    pub rmsprop: Rmsprop,
    pub rng: RngState,
    pub t: usize,
    /// Free-parameter flows, layer by layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<Vec<LayerRecord>>,
}

impl Checkpoint {
    pub fn capture(state: &TrainState, config: serde_json::Value) -> Self {
        let flow = match &state.model.variational {
            Variational::Free { flow, .. } => Some(flow.to_records()),
            Variational::Amortized(_) => None,
        };
        Self {
            config,
            registry: state.model.registry(),
            params: state.model.params(),
            rmsprop: state.optimizer.clone(),
            rng: state.rng.state(),
            t: state.t,
            flow,
        }
    }

    /// Loads parameters, optimizer, RNG and step into a state built from the
    /// same configuration.
    pub fn restore_into(&self, state: &mut TrainState) -> Result<()> {
        if self.registry != state.model.registry() {
            return Err(Error::Data(
                "checkpoint parameter layout does not match the model".into(),
            ));
        }
        check_dim(state.model.num_params(), self.rmsprop.mean_square.len())?;
        check_dim(state.model.num_params(), self.rmsprop.velocity.len())?;
        state.model.set_params(&self.params)?;
        state.optimizer = self.rmsprop.clone();
        state.rng = Rng::from_state(&self.rng);
        state.t = self.t;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
