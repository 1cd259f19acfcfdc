//! Knowledge-graph storage, TSV ingestion, closed-world splitting, dataset
//! statistics, synthetic generation and alignment augmentation.

mod dataset;
mod graph;
mod split;
mod synth;

pub use dataset::{load_dataset, write_synthetic, AlignmentFile, Dataset, DatasetManifest, MANIFEST_FILE, SPLIT_FILE};
pub use graph::{
    add_alignment, alignment_augment, alignment_relation_name, load_pairs_tsv, load_tsv, write_pairs_tsv, AlignmentLink, EntityId,
    KnowledgeGraph, LoadStats, Named, Registry, RelationId, Triple,
};
pub use split::{
    closed_world_violations, dataset_stats, format_stats, split_closed_world, te_ratio, te_ratio_from_counts,
    DatasetSplit, LanguageStats, Part, PartStats, SplitRatios,
};
pub use synth::{language_tags, synth_generate, unwitnessed_conclusions, Pattern, SynthSpec, SynthWorld};

use crate::error::Result;
use crate::vocab::{TokenizerMode, Vocabulary};

/// Vocabulary over every entity and relation name of the given graphs.
pub fn build_vocab(graphs: &[KnowledgeGraph], mode: TokenizerMode) -> Result<Vocabulary> {
    Vocabulary::build(graphs.iter().flat_map(KnowledgeGraph::surfaces), mode)
}
