//! Differentiable building blocks and the cycle classifier built from them.

pub mod cnn;
pub mod layers;
pub mod linalg;
pub mod metrics;
pub mod param;
pub mod train;

pub use cnn::{cycle_to_chw, CnnModel, CnnShape, GatePosition, LodConfig, Prediction};
pub use metrics::Metrics;
pub use param::{Adam, AdamConfig, Param, Parameters};
pub use train::{evaluate, train, History, TrainConfig, TrainError};
