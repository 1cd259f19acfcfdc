use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
    pub lang: String,
}

/// A registered entity or relation name. Names are unique per language.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Named {
    pub surface: String,
    pub lang: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Registry {
    items: Vec<Named>,
    index: HashMap<(String, String), u32>,
}

impl Registry {
    fn intern(&mut self, surface: &str, lang: &str) -> u32 {
        let key = (surface.to_string(), lang.to_string());
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = self.items.len() as u32;
        self.items.push(Named {
            surface: surface.to_string(),
            lang: lang.to_string(),
        });
        self.index.insert(key, id);
        id
    }

    fn lookup(&self, surface: &str, lang: &str) -> Option<u32> {
        self.index.get(&(surface.to_string(), lang.to_string())).copied()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: u32) -> &Named {
        &self.items[id as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Named> {
        self.items.iter()
    }
}

/// Source and target language of an entity-alignment relation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentLink {
    pub source: String,
    pub target: String,
}

/// Facts over per-language entity and relation registries. A graph built by
/// merging several languages keeps every name tagged with its language.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    pub lang: String,
    entities: Registry,
    relations: Registry,
    triples: Vec<Triple>,
    seen: HashSet<(EntityId, RelationId, EntityId)>,
    alignment: BTreeMap<RelationId, AlignmentLink>,
}

impl KnowledgeGraph {
    pub fn new(lang: impl Into<String>) -> Self {
        KnowledgeGraph {
            lang: lang.into(),
            ..Default::default()
        }
    }

    pub fn entities(&self) -> &Registry {
        &self.entities
    }

    pub fn relations(&self) -> &Registry {
        &self.relations
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity(&self, id: EntityId) -> &Named {
        self.entities.get(id.0)
    }

    pub fn relation(&self, id: RelationId) -> &Named {
        self.relations.get(id.0)
    }

    pub fn entity_id(&self, surface: &str, lang: &str) -> Option<EntityId> {
        self.entities.lookup(surface, lang).map(EntityId)
    }

    pub fn relation_id(&self, surface: &str, lang: &str) -> Option<RelationId> {
        self.relations.lookup(surface, lang).map(RelationId)
    }

    pub fn add_entity(&mut self, surface: &str, lang: &str) -> EntityId {
        EntityId(self.entities.intern(surface, lang))
    }

    pub fn add_relation(&mut self, surface: &str, lang: &str) -> RelationId {
        RelationId(self.relations.intern(surface, lang))
    }

    /// Adds a fact in this graph's language. Returns false for a duplicate.
    pub fn add_fact(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let lang = self.lang.clone();
        let h = self.add_entity(head, &lang);
        let r = self.add_relation(relation, &lang);
        let t = self.add_entity(tail, &lang);
        self.insert(Triple {
            head: h,
            relation: r,
            tail: t,
            lang,
        })
    }

    /// Inserts a triple whose ids are already registered. Returns false for a duplicate.
    pub fn insert(&mut self, t: Triple) -> bool {
        assert!((t.head.0 as usize) < self.entities.len() && (t.tail.0 as usize) < self.entities.len());
        assert!((t.relation.0 as usize) < self.relations.len());
        if !self.seen.insert((t.head, t.relation, t.tail)) {
            return false;
        }
        self.triples.push(t);
        true
    }

    pub fn contains(&self, head: EntityId, relation: RelationId, tail: EntityId) -> bool {
        self.seen.contains(&(head, relation, tail))
    }

    pub fn is_alignment(&self, r: RelationId) -> bool {
        self.alignment.contains_key(&r)
    }

    pub fn alignment_link(&self, r: RelationId) -> Option<&AlignmentLink> {
        self.alignment.get(&r)
    }

    /// Language whose entities answer queries over relation `r`.
    pub fn answer_lang(&self, r: RelationId) -> &str {
        match self.alignment.get(&r) {
            Some(link) => &link.target,
            None => &self.relation(r).lang,
        }
    }

    /// Distinct triple languages in order of first appearance.
    pub fn languages(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for t in &self.triples {
            if seen.insert(t.lang.as_str()) {
                out.push(t.lang.clone());
            }
        }
        out
    }

    /// Entity ids registered under `lang`, ascending.
    pub fn entities_of_lang(&self, lang: &str) -> Vec<EntityId> {
        (0..self.entities.len() as u32)
            .filter(|&i| self.entities.get(i).lang == lang)
            .map(EntityId)
            .collect()
    }

    /// Every entity and relation surface string (vocabulary corpus).
    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.entities
            .iter()
            .chain(self.relations.iter())
            .map(|n| n.surface.as_str())
    }

    /// Concatenates graphs, re-registering names in order.
    pub fn merge(graphs: &[KnowledgeGraph]) -> KnowledgeGraph {
        let lang = graphs.iter().map(|g| g.lang.as_str()).collect::<Vec<_>>().join("+");
        let mut out = KnowledgeGraph::new(lang);
        for g in graphs {
            for t in &g.triples {
                let (h, r, tl) = (g.entity(t.head), g.relation(t.relation), g.entity(t.tail));
                let h = out.add_entity(&h.surface, &h.lang);
                let rid = out.add_relation(&r.surface, &r.lang);
                let tl = out.add_entity(&tl.surface, &tl.lang);
                if let Some(link) = g.alignment.get(&t.relation) {
                    out.alignment.insert(rid, link.clone());
                }
                out.insert(Triple {
                    head: h,
                    relation: rid,
                    tail: tl,
                    lang: t.lang.clone(),
                });
            }
        }
        out
    }

    /// Writes the facts of one language as `head\trelation\ttail` lines.
    pub fn write_tsv(&self, lang: &str, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for t in self.triples.iter().filter(|t| t.lang == lang) {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.entity(t.head).surface,
                self.relation(t.relation).surface,
                self.entity(t.tail).surface
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadStats {
    pub lines: usize,
    pub duplicates: usize,
}

fn parse_fields<'a>(path: &Path, lineno: usize, line: &'a str, n: usize) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != n {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg: format!("expected {n} tab-separated fields, found {}", fields.len()),
        });
    }
    if let Some(i) = fields.iter().position(|f| f.trim().is_empty()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg: format!("field {} is empty", i + 1),
        });
    }
    Ok(fields)
}

fn lines_of(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.is_empty())
}

/// Reads `head\trelation\ttail` lines. Duplicate lines are dropped and counted.
pub fn load_tsv(path: &Path, lang: &str) -> Result<(KnowledgeGraph, LoadStats)> {
    let text = std::fs::read_to_string(path)?;
    let mut g = KnowledgeGraph::new(lang);
    let mut stats = LoadStats {
        lines: 0,
        duplicates: 0,
    };
    for (lineno, line) in lines_of(&text) {
        let f = parse_fields(path, lineno, line, 3)?;
        stats.lines += 1;
        if !g.add_fact(f[0], f[1], f[2]) {
            stats.duplicates += 1;
        }
    }
    if stats.duplicates > 0 {
        log::info!("{}: dropped {} duplicate lines", path.display(), stats.duplicates);
    }
    Ok((g, stats))
}

/// Reads `entity1\tentity2` alignment pairs.
pub fn load_pairs_tsv(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    lines_of(&text)
        .map(|(lineno, line)| {
            let f = parse_fields(path, lineno, line, 2)?;
            Ok((f[0].to_string(), f[1].to_string()))
        })
        .collect()
}

pub fn write_pairs_tsv(pairs: &[(String, String)], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (a, b) in pairs {
        writeln!(w, "{a}\t{b}")?;
    }
    w.flush()?;
    Ok(())
}

/// Name of the synthetic relation linking equivalent entities of two languages.
pub fn alignment_relation_name(source: &str, target: &str) -> String {
    format!("same_as_{source}_{target}")
}

/// Merges two graphs and adds one `(e1, same_as_<l1>_<l2>, e2)` triple per
/// pair, so that alignment becomes ordinary tail prediction.
pub fn alignment_augment(g1: &KnowledgeGraph, g2: &KnowledgeGraph, pairs: &[(String, String)]) -> Result<KnowledgeGraph> {
    let mut merged = KnowledgeGraph::merge(&[g1.clone(), g2.clone()]);
    add_alignment(&mut merged, &g1.lang, &g2.lang, pairs)?;
    Ok(merged)
}

/// Adds alignment triples between two languages already present in `g`.
pub fn add_alignment(g: &mut KnowledgeGraph, source: &str, target: &str, pairs: &[(String, String)]) -> Result<()> {
    let pair_lang = format!("{source}-{target}");
    let rel_name = alignment_relation_name(source, target);
    let mut resolved = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let (Some(ea), Some(eb)) = (g.entity_id(a, source), g.entity_id(b, target)) else {
            return Err(Error::contract(format!(
                "alignment pair ({a}, {b}) names an entity missing from {source} or {target}"
            )));
        };
        resolved.push((ea, eb));
    }
    if !resolved.is_empty() {
        let rid = g.add_relation(&rel_name, &pair_lang);
        g.alignment.insert(
            rid,
            AlignmentLink {
                source: source.to_string(),
                target: target.to_string(),
            },
        );
        for (ea, eb) in resolved {
            g.insert(Triple {
                head: ea,
                relation: rid,
                tail: eb,
                lang: pair_lang.clone(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_single_triple() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "de.tsv", "a\tr\tb\n");
        let (g, stats) = load_tsv(&p, "de").unwrap();
        assert_eq!((g.entities().len(), g.relations().len(), g.triples().len()), (2, 1, 1));
        assert_eq!(stats.duplicates, 0);
    }

    #[test]
    fn duplicates_are_dropped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "de.tsv", "a\tr\tb\na\tr\tb\n");
        let (g, stats) = load_tsv(&p, "de").unwrap();
        assert_eq!(g.triples().len(), 1);
        assert_eq!(stats.duplicates, 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "de.tsv", "a\tr\tb\nbroken line\n");
        match load_tsv(&p, "de").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
        let p = write(dir.path(), "de2.tsv", "a\t\tb\n");
        assert!(matches!(load_tsv(&p, "de"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn alignment_augment_adds_one_edge_per_pair() {
        let mut g1 = KnowledgeGraph::new("de");
        g1.add_fact("a", "r", "b");
        let mut g2 = KnowledgeGraph::new("fr");
        g2.add_fact("x", "s", "y");
        let merged = alignment_augment(&g1, &g2, &[("a".into(), "x".into())]).unwrap();
        assert_eq!(merged.triples().len(), 3);
        let last = merged.triples().last().unwrap();
        assert!(merged.is_alignment(last.relation));
        assert_eq!(merged.relation(last.relation).surface, "same_as_de_fr");
        assert_eq!(merged.answer_lang(last.relation), "fr");
        assert_eq!(merged.entity(last.tail).lang, "fr");
    }

    #[test]
    fn alignment_augment_without_pairs_is_disjoint_union() {
        let mut g1 = KnowledgeGraph::new("de");
        g1.add_fact("a", "r", "b");
        let mut g2 = KnowledgeGraph::new("fr");
        g2.add_fact("a", "r", "b");
        let merged = alignment_augment(&g1, &g2, &[]).unwrap();
        assert_eq!(merged.triples().len(), 2);
        assert_eq!(merged.entities().len(), 4);
    }

    #[test]
    fn alignment_augment_rejects_unknown_entity() {
        let mut g1 = KnowledgeGraph::new("de");
        g1.add_fact("a", "r", "b");
        let g2 = KnowledgeGraph::new("fr");
        let err = alignment_augment(&g1, &g2, &[("a".into(), "nope".into())]).unwrap_err();
        assert!(err.to_string().contains("(a, nope)"));
    }
}
