//! Compact single-class grid detector.
//!
//! The network, loss and optimizer are written out by hand in f64 so every gradient can be
//! checked against finite differences. Weights persist as f32 in the `RDW1` format.

pub mod adam;
pub mod config;
pub mod decode;
pub mod loss;
pub mod network;
pub mod train;
pub mod weights_io;

pub use adam::{adam_step, adam_update, AdamState};
pub use config::{LossWeights, LrSchedule, TrainConfig, WeightDecayMode, LEAKY_SLOPE, NUM_CLASSES, OUTPUTS_PER_CELL};
pub use decode::{decode_grid, nms, postprocess, predict, PredictOptions};
pub use loss::{assign_targets, detection_loss, loss_and_gradients, sigmoid, softplus, CellTarget, LossOutput};
pub use network::{forward, GridPrediction, ModelWeights, Network, Tensor};
pub use train::{train, train_with_observer, TrainOutcome, TrainSample};
pub use weights_io::{decode_weights, encode_weights, load_weights, quantize, save_weights, WEIGHTS_MAGIC};
