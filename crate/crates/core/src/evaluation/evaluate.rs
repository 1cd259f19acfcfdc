use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::metrics::{length_report, Hits, LengthBucket};
use crate::error::{Error, Result};
use crate::inference::{constrained_beam_search, rank_trie, EntityTrie, Prediction};
use crate::kgdata::{DatasetSplit, KnowledgeGraph, Part, Triple};
use crate::model::Model;
use crate::vocab::{TokenId, Vocabulary};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Every non-alignment test query.
    #[default]
    Kgc,
    /// Only alignment-relation queries.
    Alignment,
}

impl std::str::FromStr for EvalMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "kgc" => Ok(Self::Kgc),
            "alignment" => Ok(Self::Alignment),
            o => Err(format!("unknown eval mode `{o}` (kgc|alignment)")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateMode {
    /// Entities of the answer's language.
    #[default]
    PerLanguage,
    /// Every entity surface form of the graph (deduplicated by surface).
    Global,
}

impl std::str::FromStr for CandidateMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "per_language" | "language" => Ok(Self::PerLanguage),
            "global" => Ok(Self::Global),
            o => Err(format!("unknown candidate mode `{o}` (per_language|global)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoder {
    Beam,
    /// Exact scores for every candidate.
    Exhaustive,
}

impl std::str::FromStr for Decoder {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "beam" => Ok(Self::Beam),
            "exhaustive" => Ok(Self::Exhaustive),
            o => Err(format!("unknown decoder `{o}` (beam|exhaustive)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub candidates: CandidateMode,
    pub decoder: Decoder,
    pub beam_width: usize,
    /// Length of each returned ranking.
    pub top_k: usize,
    /// Drop other known true tails before ranking.
    pub filtered: bool,
    /// Buckets with fewer queries are flagged as excluded.
    pub length_threshold: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mode: EvalMode::Kgc,
            candidates: CandidateMode::PerLanguage,
            decoder: Decoder::Beam,
            beam_width: 10,
            top_k: 10,
            filtered: false,
            length_threshold: 10,
        }
    }
}

/// Per-query outcome (also the prediction-dump line).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub lang: String,
    pub head: String,
    pub relation: String,
    pub gold: String,
    pub gold_len: usize,
    /// 1-based rank of the gold within the returned list.
    pub gold_rank: Option<usize>,
    pub top: Vec<RankedEntity>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntity {
    pub entity: String,
    pub log_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageHits {
    pub lang: String,
    pub queries: usize,
    /// Percentages.
    pub hits: Hits,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub part: String,
    pub config: EvalConfig,
    pub queries: usize,
    pub per_language: Vec<LanguageHits>,
    /// Unweighted mean of the per-language percentages.
    pub macro_avg: Hits,
    pub length_buckets: Vec<LengthBucket>,
}

/// Candidate tries keyed by answer language (or one global trie).
struct Candidates<'a> {
    g: &'a KnowledgeGraph,
    vocab: &'a Vocabulary,
    mode: CandidateMode,
    tries: BTreeMap<String, EntityTrie>,
}

impl<'a> Candidates<'a> {
    fn key(&self, answer_lang: &str) -> String {
        match self.mode {
            CandidateMode::PerLanguage => answer_lang.to_string(),
            CandidateMode::Global => "*".to_string(),
        }
    }

    fn trie(&mut self, answer_lang: &str) -> Result<&EntityTrie> {
        let key = self.key(answer_lang);
        if !self.tries.contains_key(&key) {
            let mut list: Vec<(u32, Vec<TokenId>)> = Vec::new();
            let mut seen = HashSet::new();
            let ids: Vec<u32> = match self.mode {
                CandidateMode::PerLanguage => self.g.entities_of_lang(answer_lang).iter().map(|e| e.0).collect(),
                CandidateMode::Global => (0..self.g.entities().len() as u32).collect(),
            };
            for id in ids {
                let surface = &self.g.entities().get(id).surface;
                if seen.insert(surface.clone()) {
                    list.push((id, self.vocab.encode(surface)));
                }
            }
            self.tries.insert(key.clone(), EntityTrie::build(&list)?);
        }
        Ok(&self.tries[&key])
    }
}

fn query_lang(t: &Triple) -> &str {
    &t.lang
}

/// Decodes every selected query of `part` and aggregates Hits@k. Returns the
/// report and the per-query results in split order.
pub fn evaluate(
    model: &Model,
    vocab: &Vocabulary,
    g: &KnowledgeGraph,
    split: &DatasetSplit,
    part: Part,
    cfg: &EvalConfig,
    checkpoint: &str,
) -> Result<(EvalReport, Vec<QueryResult>)> {
    if cfg.top_k == 0 || cfg.beam_width < cfg.top_k {
        return Err(Error::Contract("eval needs beam_width >= top_k >= 1".into()));
    }
    let selected: Vec<&Triple> = split
        .triples(g, part)
        .filter(|t| match cfg.mode {
            EvalMode::Kgc => !g.is_alignment(t.relation),
            EvalMode::Alignment => g.is_alignment(t.relation),
        })
        .collect();
    if selected.is_empty() {
        return Err(Error::Contract(format!("no {:?} queries in the {part:?} part", cfg.mode)));
    }
    // known tails per (head, relation) for the filtered setting
    let mut known: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
    if cfg.filtered {
        for t in g.triples() {
            known.entry((t.head.0, t.relation.0)).or_default().push(t.tail.0);
        }
    }
    let mut cands = Candidates {
        g,
        vocab,
        mode: cfg.candidates,
        tries: BTreeMap::new(),
    };
    let max_len = model.config().max_seq_len;
    let mut results = Vec::with_capacity(selected.len());
    for t in selected {
        let head = &g.entity(t.head).surface;
        let rel = &g.relation(t.relation).surface;
        let gold = &g.entity(t.tail).surface;
        let answer_lang = g.answer_lang(t.relation).to_string();
        let trie = cands.trie(&answer_lang)?;
        let gold_tokens = vocab.encode(gold);
        if trie.lookup(&gold_tokens).is_none() {
            return Err(Error::ClosedWorld(format!(
                "gold `{gold}` ({answer_lang}) is not among the candidates"
            )));
        }
        let same_surface = |id: u32| g.entities().get(id).surface == *gold;
        let others: HashSet<String> = known
            .get(&(t.head.0, t.relation.0))
            .map(|v| {
                v.iter()
                    .filter(|&&id| !same_surface(id))
                    .map(|&id| g.entities().get(id).surface.clone())
                    .collect()
            })
            .unwrap_or_default();
        let k = cfg.top_k + others.len();
        let query = vocab.serialize_query(head, rel, max_len)?;
        let (preds, truncated): (Vec<Prediction>, bool) = match cfg.decoder {
            Decoder::Beam => {
                let r = constrained_beam_search(model, &query, trie, cfg.beam_width.max(k), k)?;
                (r.predictions, r.truncated)
            }
            Decoder::Exhaustive => (rank_trie(model, &query, trie)?, false),
        };
        let top: Vec<RankedEntity> = preds
            .into_iter()
            .map(|p| RankedEntity {
                entity: g.entities().get(p.entity).surface.clone(),
                log_prob: p.log_prob,
            })
            .filter(|p| !others.contains(&p.entity))
            .take(cfg.top_k)
            .collect();
        let gold_rank = top.iter().position(|p| p.entity == *gold).map(|i| i + 1);
        results.push(QueryResult {
            lang: query_lang(t).to_string(),
            head: head.clone(),
            relation: rel.clone(),
            gold: gold.clone(),
            gold_len: gold_tokens.len(),
            gold_rank,
            top,
            truncated,
        });
    }
    let report = summarize(&results, cfg, checkpoint, part)?;
    Ok((report, results))
}

/// Aggregates per-query results into a report.
pub fn summarize(results: &[QueryResult], cfg: &EvalConfig, checkpoint: &str, part: Part) -> Result<EvalReport> {
    let mut by_lang: BTreeMap<&str, Vec<Option<usize>>> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for r in results {
        if !by_lang.contains_key(r.lang.as_str()) {
            order.push(&r.lang);
        }
        by_lang.entry(&r.lang).or_default().push(r.gold_rank);
    }
    let per_language: Vec<LanguageHits> = order
        .iter()
        .map(|l| LanguageHits {
            lang: l.to_string(),
            queries: by_lang[l].len(),
            hits: Hits::from_ranks(&by_lang[l]).percent(),
        })
        .collect();
    let shown: Vec<Hits> = per_language.iter().map(|l| l.hits).collect();
    let round2 = |x: f64| (x * 100.0).round() / 100.0;
    let m = Hits::mean(&shown);
    let ranks: Vec<Option<usize>> = results.iter().map(|r| r.gold_rank).collect();
    let lens: Vec<usize> = results.iter().map(|r| r.gold_len).collect();
    Ok(EvalReport {
        checkpoint: checkpoint.to_string(),
        part: format!("{part:?}").to_lowercase(),
        config: cfg.clone(),
        queries: results.len(),
        per_language,
        macro_avg: Hits {
            hits1: round2(m.hits1),
            hits3: round2(m.hits3),
            hits10: round2(m.hits10),
        },
        length_buckets: length_report(&ranks, &lens, cfg.length_threshold)?,
    })
}
