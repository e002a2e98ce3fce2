//! Transformer over fused claim/evidence tokens that pools the class token
//! of every encoder layer before classification.

mod checkpoint;
mod config;
mod model;
mod params;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{default_grid, AitrConfig, Pooling};
pub use model::{build_input, forward, fuse_modalities, loss_and_grad, pool_and_classify, AitrInput, ForwardTrace};
pub use params::{AitrParams, Tensor};
pub use train::{
    accuracy, binary_labels, grid_search, predict_proba, prepare_inputs, train, GridCell, GridOutcome, TrainOutcome,
    TrainingSet,
};
