use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kgdata::KnowledgeGraph;
use crate::model::{MaskMode, VisibilityMask};
use crate::numerics::derive_seed;
use crate::objectives::derangement;
use crate::vocab::{SerializedTriple, TokenId, Vocabulary};

/// One serialized training triple.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    /// Index into the graph's triple list.
    pub index: usize,
    pub lang: String,
    pub seq: SerializedTriple,
}

/// Serializes the given triples of `g`.
pub fn prepare_examples(g: &KnowledgeGraph, indices: &[usize], vocab: &Vocabulary, max_len: usize) -> Result<Vec<Example>> {
    indices
        .iter()
        .map(|&i| {
            let t = g
                .triples()
                .get(i)
                .ok_or_else(|| Error::Contract(format!("triple index {i} out of range")))?;
            let seq = vocab.serialize_triple(
                &g.entity(t.head).surface,
                &g.relation(t.relation).surface,
                &g.entity(t.tail).surface,
                max_len,
            )?;
            Ok(Example {
                index: i,
                lang: t.lang.clone(),
                seq,
            })
        })
        .collect()
}

/// A mini-batch. Sequences are kept unpadded for the forward pass (rows are
/// concatenated); [`Batch::padded_ids`] and [`Batch::padded_mask`] give the
/// rectangular view.
#[derive(Clone, Debug)]
pub struct Batch {
    pub examples: Vec<Example>,
    pub masks: Vec<VisibilityMask>,
}

impl Batch {
    pub fn new(examples: Vec<Example>, mode: MaskMode) -> Self {
        let masks = examples.iter().map(|e| VisibilityMask::build(&e.seq, mode)).collect();
        Batch { examples, masks }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn width(&self) -> usize {
        self.examples.iter().map(|e| e.seq.len()).max().unwrap_or(0)
    }

    pub fn seqs(&self) -> Vec<&SerializedTriple> {
        self.examples.iter().map(|e| &e.seq).collect()
    }

    pub fn langs(&self) -> Vec<&str> {
        self.examples.iter().map(|e| e.lang.as_str()).collect()
    }

    /// Ids right-padded with `<pad>` to the batch width.
    pub fn padded_ids(&self, pad: TokenId) -> Vec<Vec<TokenId>> {
        let w = self.width();
        self.examples
            .iter()
            .map(|e| {
                let mut v = e.seq.ids.clone();
                v.resize(w, pad);
                v
            })
            .collect()
    }

    /// Mask of example `i` extended to the batch width (pad columns blocked).
    pub fn padded_mask(&self, i: usize) -> VisibilityMask {
        self.masks[i].padded(self.width())
    }
}

/// Splits the examples into batches after a shuffle seeded by `(seed, epoch)`.
/// Every example appears exactly once per epoch.
pub fn make_batches(examples: &[Example], batch_size: usize, seed: u64, epoch: u64, mode: MaskMode) -> Result<Vec<Batch>> {
    if examples.is_empty() {
        return Err(Error::Contract("no training examples".into()));
    }
    if batch_size == 0 {
        return Err(Error::Contract("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "batches", epoch));
    order.shuffle(&mut rng);
    Ok(order
        .chunks(batch_size)
        .map(|chunk| Batch::new(chunk.iter().map(|&i| examples[i].clone()).collect(), mode))
        .collect())
}

/// In-batch negative assignment for step `step`: a derangement, or `None`
/// for a batch of one (the local loss is then skipped).
pub fn negative_sampler(batch_len: usize, seed: u64, step: u64) -> Option<Vec<usize>> {
    (batch_len >= 2).then(|| derangement(batch_len, derive_seed(seed, "negatives", step)))
}
