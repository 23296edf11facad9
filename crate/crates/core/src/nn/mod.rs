//! A small CNN with hand-written backward passes, BCE loss, Adam and the
//! training loop.

pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod train;

pub use model::{
    assemble_input, param_delta, raw_input, BackboneConfig, Detector, InputAssembly,
    TinyBackbone, DEFAULT_WIDTHS,
};
pub use optim::{Adam, AdamConfig};
pub use train::{load_checkpoint, predict, to_batch, train, Sample, TrainConfig, TrainReport};
