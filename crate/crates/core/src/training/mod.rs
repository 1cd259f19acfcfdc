//! Batching, negative sampling, the training loop and embedding baselines.

mod baseline;
mod batch;
mod trainer;

pub use baseline::{train_embedding_baseline, BaselineConfig, BaselineKind, EmbeddingModel};
pub use batch::{make_batches, negative_sampler, prepare_examples, Batch, Example};
pub use trainer::{train, StepRecord, TrainConfig, TrainOutcome, Trainer, ValidHook};
