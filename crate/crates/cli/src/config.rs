use std::path::Path;

use serde::{Deserialize, Serialize};

use flowvi_core::{Activation, FlowFamily, Likelihood, TrainConfig};

use crate::error::CliError;

/// Fully resolved settings of one run, written to `config.json`. Replaying a
/// file reproduces the run; the output directory is not part of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum ExperimentConfig {
    Fit2d(Fit2dConfig),
    Vae(VaeConfig),
    Gradcheck(GradcheckConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fit2dConfig {
    pub energy: u8,
    pub flow: FlowFamily,
    /// Hidden width of NICE coupling nets.
    pub nice_hidden: usize,
    pub grid_n: usize,
    /// Monte Carlo samples for the KL estimate.
    pub kl_samples: usize,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub data: String,
    pub latent_dim: usize,
    pub flow: FlowFamily,
    pub likelihood: Likelihood,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub nice_hidden: usize,
    pub is_samples: usize,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub instances: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrupt: Option<String>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let train = match self {
            ExperimentConfig::Fit2d(c) => {
                if !(1..=4).contains(&c.energy) {
                    return Err(CliError::Input(format!(
                        "energy must be 1-4, got {}",
                        c.energy
                    )));
                }
                if c.grid_n < 100 {
                    return Err(CliError::Input(format!(
                        "grid_n must be >= 100, got {}",
                        c.grid_n
                    )));
                }
                if c.kl_samples == 0 {
                    return Err(CliError::Input("kl_samples must be >= 1".into()));
                }
                &c.train
            }
            ExperimentConfig::Vae(c) => {
                if c.latent_dim == 0 {
                    return Err(CliError::Input("latent_dim must be >= 1".into()));
                }
                if c.is_samples == 0 {
                    return Err(CliError::Input("is_samples must be >= 1".into()));
                }
                &c.train
            }
            ExperimentConfig::Gradcheck(_) => return Ok(()),
        };
        train.validate().map_err(|e| CliError::Input(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let value = serde_json::to_value(self).map_err(|e| CliError::Internal(e.to_string()))?;
        crate::output::json_string(&value)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
