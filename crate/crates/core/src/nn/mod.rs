//! Neural networks: dense layers, the operator network, the FNN baseline and
//! their training loop.

pub mod deeponet;
pub mod fnn;
pub mod io;
pub mod mlp;
pub mod norm;
pub mod train;

pub use deeponet::{DeepONetModel, DeepOnetConfig, OutputMode};
pub use fnn::{FnnConfig, FnnModel};
pub use mlp::{Activation, Architecture, Mlp, NetworkSpec};
pub use norm::NormalizationStats;
pub use train::{
    fine_tune, train, validation_subset, LossHistory, PlateauConfig, Regressor, Trainable,
    TrainingConfig,
};

use crate::dynamics::{InterfaceInput, State};
use crate::error::Result;

/// One-step predictor used by the rollout schemes. `predict` returns the raw
/// de-normalized output; its meaning is given by `output_mode`.
pub trait StepPredictor: Sync {
    fn output_mode(&self) -> OutputMode;
    fn n_sensors(&self) -> usize;
    fn predict(&self, x: &State, ys: &[InterfaceInput], locs: &[f64], h: f64) -> Result<State>;
}
