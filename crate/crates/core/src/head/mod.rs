//! Trainable classification head on embeddings.
//!
//! A dense network with zero or one ReLU hidden layer and a softmax output, trained
//! with focal loss and ADAM while Gaussian noise is added to the training embeddings
//! on the fly. All arithmetic runs in `f64` with a fixed reduction order, so a run is
//! bitwise reproducible for a given seed.

mod adam;
mod checkpoint;
mod config;
mod loss;
mod model;
mod noise;
mod train;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta,
};
pub use config::{HeadConfig, ValMetric};
pub use loss::{focal_logit_gradient, focal_loss, PROB_FLOOR};
pub use model::{backward, batch_loss, forward, init_head, predict, softmax, Dense, Gradients, HeadModel};
pub use noise::add_noise;
pub use train::{evaluate_metric, inverse_frequency_alpha, train, EpochRecord, TrainingLog};
