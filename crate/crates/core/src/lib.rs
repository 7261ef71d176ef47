//! Normalizing-flow variational inference: planar, radial and NICE flows,
//! the flow-based free energy with pathwise gradients, and the training and
//! evaluation loop.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`, which is what the trainer uses.

pub mod dataset;
pub mod engine;
pub mod error;
pub mod flows;
pub mod gradcheck;
pub mod json;
pub mod math;
pub mod models;
pub mod scalar;

pub use dataset::Dataset;
pub use engine::{Model, Target, TrainConfig, TrainState, Variational};
pub use error::{Error, Result};
pub use flows::{FlowFamily, FlowLayer, FlowResult, FlowStack, LayerRecord};
pub use math::{Mat, Rng};
pub use models::{
    Activation, Decoder, DiagGaussian, EnergyFunction, InferenceNet, Likelihood, Mlp, Potential,
};
pub use scalar::Real;

pub type Mat64 = Mat<f64>;
pub type Planar64 = flows::planar::Planar<f64>;
pub type Radial64 = flows::radial::Radial<f64>;
pub type NiceCoupling64 = flows::nice::NiceCoupling<f64>;
pub type FlowLayer64 = FlowLayer<f64>;
pub type FlowStack64 = FlowStack<f64>;
pub type DiagGaussian64 = DiagGaussian<f64>;
pub type Mlp64 = Mlp<f64>;
pub type InferenceNet64 = InferenceNet<f64>;
pub type Decoder64 = Decoder<f64>;
