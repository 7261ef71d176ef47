use crate::error::{Error, Result};
use crate::flows::{FlowFamily, FlowStack};
use crate::math::Rng;
use crate::models::amortized::INIT_GAIN;
use crate::models::{Activation, Decoder, DiagGaussian, InferenceNet, Likelihood};

use super::model::{Model, Target, Variational};

/// Free `q₀ = N(0, I)` and a `k`-layer flow with raw parameters
/// `N(0, INIT_GAIN²)`.
pub fn free_model(
    target: Target,
    latent: usize,
    family: FlowFamily,
    k: usize,
    nice_hidden: usize,
    rng: &mut Rng,
) -> Result<Model> {
    if latent == 0 {
        return Err(Error::InvalidArgument(
            "latent dimension must be >= 1".into(),
        ));
    }
    let flow = FlowStack::random(family, latent, k, INIT_GAIN, nice_hidden, rng)?;
    Model::new(
        target,
        Variational::Free {
            q0: DiagGaussian::standard(latent),
            flow,
        },
    )
}

/// Shape of a deep latent Gaussian model and its inference network.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeSpec {
    pub data_dim: usize,
    pub latent: usize,
    /// Hidden widths (after the nonlinearity) for both networks.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub likelihood: Likelihood,
    pub family: FlowFamily,
    pub k: usize,
    pub nice_hidden: usize,
}

pub fn vae_model(spec: &VaeSpec, rng: &mut Rng) -> Result<Model> {
    let decoder = Decoder::init(
        spec.latent,
        &spec.hidden,
        spec.data_dim,
        spec.activation,
        spec.likelihood,
        INIT_GAIN,
        rng,
    )?;
    let encoder = InferenceNet::init(
        spec.data_dim,
        &spec.hidden,
        spec.activation,
        spec.latent,
        spec.family,
        spec.k,
        spec.nice_hidden,
        rng,
    )?;
    Model::new(Target::Decoder(decoder), Variational::Amortized(encoder))
}
