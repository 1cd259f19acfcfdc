//! On-disk dataset layout: one `<lang>.tsv` per language, optional
//! `align_<a>_<b>.tsv` pair files, `split.json` over the merged graph and a
//! `dataset.json` manifest tying them together.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::{add_alignment, load_pairs_tsv, load_tsv, write_pairs_tsv, KnowledgeGraph};
use super::split::{split_closed_world, DatasetSplit, SplitRatios};
use super::synth::{synth_generate, SynthSpec};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "dataset.json";
pub const SPLIT_FILE: &str = "split.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentFile {
    pub source: String,
    pub target: String,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Merge order of the per-language graphs.
    pub languages: Vec<String>,
    #[serde(default)]
    pub alignments: Vec<AlignmentFile>,
    pub split: String,
    /// Generator parameters, for synthetic datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
}

/// A loaded dataset: merged graph plus its split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub graph: KnowledgeGraph,
    pub split: DatasetSplit,
}

/// (source language, target language, entity pairs).
type AlignedPairs = (String, String, Vec<(String, String)>);

fn assemble(graphs: &[KnowledgeGraph], alignments: &[AlignedPairs]) -> Result<KnowledgeGraph> {
    let mut g = KnowledgeGraph::merge(graphs);
    for (s, t, pairs) in alignments {
        add_alignment(&mut g, s, t, pairs)?;
    }
    Ok(g)
}

/// Generates a synthetic world, writes it under `dir` and returns it loaded.
/// With `align`, pair files are written for every language pair and the
/// alignment triples join the merged graph (and thus the split).
pub fn write_synthetic(dir: &Path, spec: &SynthSpec, ratios: SplitRatios, split_seed: u64, align: bool) -> Result<Dataset> {
    let world = synth_generate(spec)?;
    std::fs::create_dir_all(dir)?;
    for g in &world.graphs {
        g.write_tsv(&g.lang, &dir.join(format!("{}.tsv", g.lang)))?;
    }
    let mut aligned = Vec::new();
    let mut files = Vec::new();
    if align {
        for a in 0..world.graphs.len() {
            for b in a + 1..world.graphs.len() {
                let (la, lb) = (&world.graphs[a].lang, &world.graphs[b].lang);
                let pairs = world.alignment_pairs(a, b);
                let file = format!("align_{la}_{lb}.tsv");
                write_pairs_tsv(&pairs, &dir.join(&file))?;
                files.push(AlignmentFile {
                    source: la.clone(),
                    target: lb.clone(),
                    file,
                });
                aligned.push((la.clone(), lb.clone(), pairs));
            }
        }
    }
    let graph = assemble(&world.graphs, &aligned)?;
    let split = split_closed_world(&graph, ratios, split_seed)?;
    split.save(&dir.join(SPLIT_FILE))?;
    let manifest = DatasetManifest {
        languages: world.graphs.iter().map(|g| g.lang.clone()).collect(),
        alignments: files,
        split: SPLIT_FILE.to_string(),
        synth: Some(spec.clone()),
    };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(Dataset { manifest, graph, split })
}

/// Reads a dataset directory written by [`write_synthetic`] (or by hand in
/// the same layout) and validates its split.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mp = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mp)
        .map_err(|e| Error::contract(format!("cannot read dataset manifest {}: {e}", mp.display())))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let mut graphs = Vec::new();
    for lang in &manifest.languages {
        graphs.push(load_tsv(&dir.join(format!("{lang}.tsv")), lang)?.0);
    }
    let mut aligned = Vec::new();
    for a in &manifest.alignments {
        aligned.push((a.source.clone(), a.target.clone(), load_pairs_tsv(&dir.join(&a.file))?));
    }
    let graph = assemble(&graphs, &aligned)?;
    let split = DatasetSplit::load(&dir.join(&manifest.split))?;
    split.validate(&graph)?;
    Ok(Dataset { manifest, graph, split })
}
