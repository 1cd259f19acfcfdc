use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.valid, self.test];
        if all.iter().any(|r| r.is_nan() || *r <= 0.0 || !r.is_finite()) {
            return Err(Error::contract(format!("split ratios must be positive: {self:?}")));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!("split ratios must sum to 1: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Part {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Part::Train),
            "valid" => Ok(Part::Valid),
            "test" => Ok(Part::Test),
            o => Err(format!("unknown split `{o}` (train|valid|test)")),
        }
    }
}

/// Train/valid/test partition of a graph's triples, stored as triple indices.
/// This is also the persisted split manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub n_triples: usize,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl DatasetSplit {
    pub fn indices(&self, part: Part) -> &[usize] {
        match part {
            Part::Train => &self.train,
            Part::Valid => &self.valid,
            Part::Test => &self.test,
        }
    }

    pub fn triples<'g>(&'g self, g: &'g KnowledgeGraph, part: Part) -> impl Iterator<Item = &'g Triple> + 'g {
        self.indices(part).iter().map(move |&i| &g.triples()[i])
    }

    /// Every graph triple in one part; used for single-split memorization runs.
    pub fn all_train(g: &KnowledgeGraph) -> Self {
        DatasetSplit {
            seed: 0,
            ratios: SplitRatios {
                train: 1.0,
                valid: 0.0,
                test: 0.0,
            },
            n_triples: g.triples().len(),
            train: (0..g.triples().len()).collect(),
            valid: Vec::new(),
            test: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Checks that indices fit the graph, parts are disjoint and the
    /// closed-world property holds.
    pub fn validate(&self, g: &KnowledgeGraph) -> Result<()> {
        if self.n_triples != g.triples().len() {
            return Err(Error::contract(format!(
                "split manifest covers {} triples but the graph has {}",
                self.n_triples,
                g.triples().len()
            )));
        }
        let mut seen = HashSet::new();
        for &i in self.train.iter().chain(&self.valid).chain(&self.test) {
            if i >= self.n_triples || !seen.insert(i) {
                return Err(Error::contract(format!("split index {i} out of range or repeated")));
            }
        }
        let unseen = closed_world_violations(g, self);
        if !unseen.is_empty() {
            return Err(Error::ClosedWorld(unseen.join("; ")));
        }
        Ok(())
    }
}

/// Describes every valid/test entity or relation absent from training.
pub fn closed_world_violations(g: &KnowledgeGraph, split: &DatasetSplit) -> Vec<String> {
    let mut ents = HashSet::new();
    let mut rels = HashSet::new();
    for t in split.triples(g, Part::Train) {
        ents.insert(t.head);
        ents.insert(t.tail);
        rels.insert(t.relation);
    }
    let mut out = Vec::new();
    for part in [Part::Valid, Part::Test] {
        for t in split.triples(g, part) {
            for e in [t.head, t.tail] {
                if !ents.contains(&e) {
                    out.push(format!("{part:?} entity `{}`", g.entity(e).surface));
                }
            }
            if !rels.contains(&t.relation) {
                out.push(format!("{part:?} relation `{}`", g.relation(t.relation).surface));
            }
        }
    }
    out
}

/// Random split that never leaves a valid/test entity or relation unseen in
/// training: offending candidates are moved to train until a fixpoint.
pub fn split_closed_world(g: &KnowledgeGraph, ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    ratios.validate()?;
    let n = g.triples().len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let want_test = (ratios.test * n as f64).round() as usize;
    let want_valid = (ratios.valid * n as f64).round() as usize;
    let want_test = want_test.min(n);
    let want_valid = want_valid.min(n - want_test);

    let mut test: Vec<usize> = order[..want_test].to_vec();
    let mut valid: Vec<usize> = order[want_test..want_test + want_valid].to_vec();
    let mut train: Vec<usize> = order[want_test + want_valid..].to_vec();

    let mut ent_seen: HashSet<EntityId> = HashSet::new();
    let mut rel_seen: HashSet<RelationId> = HashSet::new();
    let cover = |t: &Triple, e: &mut HashSet<EntityId>, r: &mut HashSet<RelationId>| {
        e.insert(t.head);
        e.insert(t.tail);
        r.insert(t.relation);
    };
    for &i in &train {
        cover(&g.triples()[i], &mut ent_seen, &mut rel_seen);
    }
    loop {
        let mut moved = false;
        for bucket in [&mut test, &mut valid] {
            let mut keep = Vec::with_capacity(bucket.len());
            for &i in bucket.iter() {
                let t = &g.triples()[i];
                let ok = ent_seen.contains(&t.head) && ent_seen.contains(&t.tail) && rel_seen.contains(&t.relation);
                if ok {
                    keep.push(i);
                } else {
                    cover(t, &mut ent_seen, &mut rel_seen);
                    train.push(i);
                    moved = true;
                }
            }
            *bucket = keep;
        }
        if !moved {
            break;
        }
    }

    let mut warnings = Vec::new();
    if test.len() < want_test {
        warnings.push(format!(
            "graph too small for closed-world split: test has {} of {} requested triples",
            test.len(),
            want_test
        ));
    }
    if valid.len() < want_valid {
        warnings.push(format!(
            "graph too small for closed-world split: valid has {} of {} requested triples",
            valid.len(),
            want_valid
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    Ok(DatasetSplit {
        seed,
        ratios,
        n_triples: n,
        train,
        valid,
        test,
        warnings,
    })
}

/// Triples over all parts divided by the number of distinct training entities.
pub fn te_ratio(g: &KnowledgeGraph, split: &DatasetSplit) -> Result<f64> {
    let total = split.train.len() + split.valid.len() + split.test.len();
    let ents: HashSet<EntityId> = split.triples(g, Part::Train).flat_map(|t| [t.head, t.tail]).collect();
    te_ratio_from_counts(total, ents.len())
}

pub fn te_ratio_from_counts(total_triples: usize, train_entities: usize) -> Result<f64> {
    if train_entities == 0 {
        return Err(Error::contract("T/E ratio undefined without training entities"));
    }
    Ok(total_triples as f64 / train_entities as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PartStats {
    pub triples: usize,
    pub relations: usize,
    /// Distinct entities occurring in this part's triples.
    pub entities: usize,
    /// Entity mentions (two per triple, not deduplicated).
    pub entity_mentions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageStats {
    pub lang: String,
    pub train: PartStats,
    pub valid: PartStats,
    pub test: PartStats,
    pub te_ratio: f64,
}

fn part_stats<'a>(triples: impl Iterator<Item = &'a Triple>) -> PartStats {
    let mut ents = HashSet::new();
    let mut rels = HashSet::new();
    let mut n = 0;
    for t in triples {
        n += 1;
        ents.insert(t.head);
        ents.insert(t.tail);
        rels.insert(t.relation);
    }
    PartStats {
        triples: n,
        relations: rels.len(),
        entities: ents.len(),
        entity_mentions: 2 * n,
    }
}

/// Per-language dataset statistics in the layout of a dataset summary table.
pub fn dataset_stats(g: &KnowledgeGraph, split: &DatasetSplit) -> Result<Vec<LanguageStats>> {
    let mut out = Vec::new();
    for lang in g.languages() {
        let of = |part| split.triples(g, part).filter(|t| t.lang == lang);
        let train = part_stats(of(Part::Train));
        let valid = part_stats(of(Part::Valid));
        let test = part_stats(of(Part::Test));
        let te_ratio = te_ratio_from_counts(train.triples + valid.triples + test.triples, train.entities)?;
        out.push(LanguageStats {
            lang,
            train,
            valid,
            test,
            te_ratio,
        });
    }
    Ok(out)
}

/// Renders statistics as an aligned text table.
pub fn format_stats(stats: &[LanguageStats]) -> String {
    let mut s = format!("{:<12}", "");
    for l in stats {
        s.push_str(&format!("{:>10}", l.lang));
    }
    s.push('\n');
    type Row = (&'static str, fn(&LanguageStats) -> String);
    let rows: [Row; 10] = [
        ("train ent", |l| l.train.entities.to_string()),
        ("train rel", |l| l.train.relations.to_string()),
        ("train tri", |l| l.train.triples.to_string()),
        ("valid ent", |l| l.valid.entities.to_string()),
        ("valid rel", |l| l.valid.relations.to_string()),
        ("valid tri", |l| l.valid.triples.to_string()),
        ("test ent", |l| l.test.entities.to_string()),
        ("test rel", |l| l.test.relations.to_string()),
        ("test tri", |l| l.test.triples.to_string()),
        ("T/E ratio", |l| format!("{:.2}", l.te_ratio)),
    ];
    for (name, f) in rows {
        s.push_str(&format!("{name:<12}"));
        for l in stats {
            s.push_str(&format!("{:>10}", f(l)));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new("de");
        g.add_fact("a", "r", "b");
        g.add_fact("b", "r", "c");
        g.add_fact("c", "r", "d");
        g
    }

    #[test]
    fn chain_graph_stays_closed_world() {
        let g = chain();
        let ratios = SplitRatios {
            train: 0.5,
            valid: 0.25,
            test: 0.25,
        };
        for seed in 0..20 {
            let s = split_closed_world(&g, ratios, seed).unwrap();
            assert!(closed_world_violations(&g, &s).is_empty());
            s.validate(&g).unwrap();
            assert_eq!(s.train.len() + s.valid.len() + s.test.len(), 3);
        }
    }

    #[test]
    fn split_is_deterministic() {
        let g = chain();
        let r = SplitRatios::default();
        assert_eq!(split_closed_world(&g, r, 7).unwrap(), split_closed_world(&g, r, 7).unwrap());
    }

    #[test]
    fn bad_ratios_rejected() {
        let g = chain();
        let r = SplitRatios {
            train: 0.5,
            valid: 0.5,
            test: 0.5,
        };
        assert!(split_closed_world(&g, r, 0).is_err());
    }

    #[test]
    fn table_two_counts_reproduce_printed_ratios() {
        let de = te_ratio_from_counts(27014 + 264 + 342, 39842).unwrap();
        let hu = te_ratio_from_counts(24193 + 614 + 731, 27765).unwrap();
        assert_eq!(format!("{de:.2}"), "0.69");
        assert_eq!(format!("{hu:.2}"), "0.92");
    }

    #[test]
    fn disjoint_triples_hit_the_lower_bound() {
        let mut g = KnowledgeGraph::new("de");
        for i in 0..10 {
            g.add_fact(&format!("h{i}"), "r", &format!("t{i}"));
        }
        let s = DatasetSplit::all_train(&g);
        assert_eq!(te_ratio(&g, &s).unwrap(), 0.5);
    }

    #[test]
    fn zero_entities_is_an_error() {
        assert!(te_ratio_from_counts(3, 0).is_err());
    }
}
