//! Desk-scale attention encoder-decoder: bidirectional GRU encoder, additive
//! attention, GRU decoder, Adadelta training and a finite-difference gradient
//! check. Everything runs in `f64` on the CPU.

mod checkpoint;
mod gradcheck;
mod model;
mod params;
mod train;
mod vocab;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, FORMAT, FORMAT_VERSION};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use model::{mean_loss, softmax, AttentionStep, DecodeStep, Dropout, EncodedSource};
pub use params::{Dims, GruParams, NmtParams, Tensor, INIT_RANGE};
pub use train::{token_accuracy, train, train_with_progress, Adadelta, TrainConfig, TrainReport};
pub use vocab::Vocab;

/// Start-of-sequence marker, fed as the first decoder input.
pub const START: usize = 0;
/// End-of-sequence marker.
pub const EOS: usize = 1;
/// Out-of-vocabulary token.
pub const UNK: usize = 2;

#[derive(Debug, Error)]
pub enum NmtError {
    #[error("invalid dimensions {0:?}")]
    BadDims(Dims),
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    OutOfRange { id: usize, vocab: usize },
    #[error("empty source sequence")]
    EmptySource,
    #[error("target needs start and end markers")]
    EmptyTarget,
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("dimension mismatch")]
    DimensionMismatch,
    #[error("bad config: {0}")]
    Config(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
