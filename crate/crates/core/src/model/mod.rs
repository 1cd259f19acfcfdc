//! Micro transformer, visibility masks and checkpoints.

pub mod checkpoint;
pub mod mask;
pub mod transformer;

pub use checkpoint::{load_checkpoint, read_header, save_checkpoint, Checkpoint, CheckpointHeader};
pub use mask::{MaskMode, VisibilityMask};
pub use transformer::{param_layout, Bound, DecoderState, EncodedTriple, Forward, Model, ModelConfig, SeqView};
