//! Closed-world decoding over an entity trie.

mod decode;
mod trie;

pub use decode::{
    complete_query, constrained_beam_search, greedy_decode, rank_exhaustive, rank_trie, BeamResult, Prediction,
};
pub use trie::{EntityTrie, ROOT};
