//! Generative knowledge-graph completion with a micro causal transformer,
//! trained under a generation loss plus a translational constraint on
//! role-token states and a Jensen-Shannon mutual-information constraint,
//! decoded with trie-constrained beam search over a closed entity set.

pub mod config;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod kgdata;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod training;
pub mod vocab;

pub use error::{Error, Result};
