//! Unit-sphere normalization ("unitization") layers together with exact and
//! estimated Earth-Mover distances and their moment-based bounds, used to
//! study internal covariate shift.
//!
//! Every numeric type is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar to `f64`, which is what the experiments use.

pub mod data;
pub mod error;
pub mod estimator;
pub mod moments;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod transport;
pub mod unitization;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Tape = tensor::Tape<f64>;
pub type Var<'t> = tensor::Var<'t, f64>;
pub type SampleSet = transport::SampleSet<f64>;
pub type MomentVector = transport::MomentVector<f64>;
pub type NoiseVector = transport::NoiseVector<f64>;
pub type LipschitzProbe = transport::LipschitzProbe<f64>;
pub type BoundReport = transport::BoundReport<f64>;
pub type BatchNorm = nn::BatchNormState<f64>;
pub type DenseLayer = nn::DenseLayer<f64>;
pub type Conv2dLayer = nn::Conv2dLayer<f64>;
pub type UnitizationParams = unitization::UnitizationParams<f64>;
pub type Unitization = unitization::UnitizationLayer<f64>;
pub type CriticNet = estimator::CriticNet<f64>;
pub type Dataset = data::Dataset<f64>;
