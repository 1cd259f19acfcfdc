//! Deterministic synthetic multilingual knowledge graphs.
//!
//! All languages share one underlying world of entities and relations; each
//! language samples its own subset of base facts and writes names in its own
//! alphabet. The compositional pattern groups relations into rules
//! `(r1, r2) -> r3` and plants `r3(a, c)` for every `r1(a, b), r2(b, c)`.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::KnowledgeGraph;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    #[default]
    Random,
    Compositional,
}

impl std::str::FromStr for Pattern {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random" => Ok(Pattern::Random),
            "compositional" => Ok(Pattern::Compositional),
            o => Err(format!("unknown pattern `{o}` (random|compositional)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_entities: usize,
    pub n_relations: usize,
    /// Triples per language.
    pub n_triples: usize,
    pub languages: Vec<String>,
    pub pattern: Pattern,
    pub seed: u64,
}

const LANGUAGE_TAGS: [&str; 7] = ["de", "fi", "fr", "hu", "it", "ja", "tr"];

/// Default tags for `n` languages.
pub fn language_tags(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| LANGUAGE_TAGS.get(i).map_or_else(|| format!("x{i}"), |t| t.to_string()))
        .collect()
}

fn alphabet(lang: &str) -> Vec<char> {
    let s = match lang {
        "de" => "abdeghiklmnorstuäöü",
        "fi" => "adehijklmnoprstuvyäö",
        "fr" => "abcdefilmnoprstuéèà",
        "hu" => "abdefgiklmnorstáéóö",
        "it" => "abcdefgilmnoprstuvz",
        "ja" => "あいうえおかきくけこさしすせそたちつてとなにぬねのまみむめも",
        "tr" => "abcdefghiklmnoprstuçğışü",
        _ => "abcdefghijklmnopqrstuvwxyz",
    };
    s.chars().collect()
}

/// A generated world: per-language graphs plus, for every entity, its
/// name in each language (used to emit alignment pairs).
#[derive(Clone, Debug, PartialEq)]
pub struct SynthWorld {
    pub graphs: Vec<KnowledgeGraph>,
    pub entity_names: Vec<Vec<String>>,
    pub relation_names: Vec<Vec<String>>,
    /// Rules `(r1, r2, r3)` over world relation indices.
    pub rules: Vec<(usize, usize, usize)>,
}

impl SynthWorld {
    /// Pairs `(name in a, name in b)` for entities present in both graphs.
    pub fn alignment_pairs(&self, a: usize, b: usize) -> Vec<(String, String)> {
        let (ga, gb) = (&self.graphs[a], &self.graphs[b]);
        (0..self.entity_names.len())
            .filter_map(|e| {
                let (na, nb) = (&self.entity_names[e][a], &self.entity_names[e][b]);
                let la = &ga.lang;
                let lb = &gb.lang;
                (ga.entity_id(na, la).is_some() && gb.entity_id(nb, lb).is_some()).then(|| (na.clone(), nb.clone()))
            })
            .collect()
    }
}

type Fact = (usize, usize, usize);

fn random_names(rng: &mut ChaCha8Rng, alphabet: &[char], n: usize, min: usize, max: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.random_range(min..=max);
        let name: String = (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
        if seen.insert(name.clone()) {
            out.push(name);
        }
    }
    out
}

/// Adds `fact` and everything it implies under `rules` if the result fits
/// within `budget`; returns whether anything was added.
fn add_with_closure(
    facts: &mut Vec<Fact>,
    index: &mut HashSet<Fact>,
    fact: Fact,
    rules: &[(usize, usize, usize)],
    budget: usize,
) -> bool {
    if index.contains(&fact) {
        return false;
    }
    let mut pending = vec![fact];
    let mut added: Vec<Fact> = Vec::new();
    let mut local: HashSet<Fact> = HashSet::new();
    local.insert(fact);
    while let Some(f) = pending.pop() {
        added.push(f);
        if facts.len() + added.len() > budget {
            return false;
        }
        let (h, r, t) = f;
        for &(r1, r2, r3) in rules {
            let all = || index.iter().chain(added.iter());
            let mut implied = Vec::new();
            if r == r1 {
                for &(b, rr, c) in all() {
                    if rr == r2 && b == t && h != c {
                        implied.push((h, r3, c));
                    }
                }
            }
            if r == r2 {
                for &(a, rr, b) in all() {
                    if rr == r1 && b == h && a != t {
                        implied.push((a, r3, t));
                    }
                }
            }
            implied.sort_unstable();
            for f2 in implied {
                if !index.contains(&f2) && local.insert(f2) {
                    pending.push(f2);
                }
            }
        }
    }
    for f in added {
        index.insert(f);
        facts.push(f);
    }
    true
}

pub fn synth_generate(spec: &SynthSpec) -> Result<SynthWorld> {
    let SynthSpec {
        n_entities: ne,
        n_relations: nr,
        n_triples: nt,
        ..
    } = *spec;
    if spec.languages.is_empty() || ne < 2 || nr == 0 {
        return Err(Error::contract("synthetic spec needs ≥1 language, ≥2 entities, ≥1 relation"));
    }
    let unique: BTreeSet<&String> = spec.languages.iter().collect();
    if unique.len() != spec.languages.len() {
        return Err(Error::contract("synthetic spec repeats a language"));
    }
    let rules: Vec<(usize, usize, usize)> = match spec.pattern {
        Pattern::Random => Vec::new(),
        Pattern::Compositional => {
            if nr < 3 {
                return Err(Error::contract("compositional pattern needs at least 3 relations"));
            }
            (0..nr / 3).map(|k| (3 * k, 3 * k + 1, 3 * k + 2)).collect()
        }
    };
    let conclusions: HashSet<usize> = rules.iter().map(|r| r.2).collect();
    let base_rels: Vec<usize> = (0..nr).filter(|r| !conclusions.contains(r)).collect();
    let max_base = ne * (ne - 1) * base_rels.len();
    let max_all = ne * (ne - 1) * nr;
    if nt == 0 || nt > max_all {
        return Err(Error::contract(format!(
            "cannot place {nt} distinct triples over {ne} entities and {nr} relations"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Shared pool of candidate base facts.
    let pool_target = (2 * nt).min(max_base);
    let mut pool: Vec<Fact> = Vec::with_capacity(pool_target);
    let mut pool_set = HashSet::new();
    if pool_target * 2 > max_base {
        let mut all: Vec<Fact> = Vec::with_capacity(max_base);
        for h in 0..ne {
            for &r in &base_rels {
                for t in 0..ne {
                    if h != t {
                        all.push((h, r, t));
                    }
                }
            }
        }
        all.shuffle(&mut rng);
        pool.extend(all.into_iter().take(pool_target));
    } else {
        while pool.len() < pool_target {
            let h = rng.random_range(0..ne);
            let t = rng.random_range(0..ne);
            let r = base_rels[rng.random_range(0..base_rels.len())];
            if h != t && pool_set.insert((h, r, t)) {
                pool.push((h, r, t));
            }
        }
    }

    let mut entity_names = vec![Vec::new(); ne];
    let mut relation_names = vec![Vec::new(); nr];
    let mut graphs = Vec::new();
    for (li, lang) in spec.languages.iter().enumerate() {
        let mut lrng = ChaCha8Rng::seed_from_u64(spec.seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(li as u64 + 1)));
        let abc = alphabet(lang);
        let enames = random_names(&mut lrng, &abc, ne, 2, 5);
        let rnames = random_names(&mut lrng, &abc, nr, 3, 6);
        for (e, n) in enames.iter().enumerate() {
            entity_names[e].push(n.clone());
        }
        for (r, n) in rnames.iter().enumerate() {
            relation_names[r].push(n.clone());
        }

        let mut order = pool.clone();
        order.shuffle(&mut lrng);
        let mut facts = Vec::with_capacity(nt);
        let mut index = HashSet::new();
        for f in order {
            if facts.len() == nt {
                break;
            }
            add_with_closure(&mut facts, &mut index, f, &rules, nt);
        }
        if facts.len() < nt {
            return Err(Error::contract(format!(
                "synthetic spec infeasible: language {lang} reached {} of {nt} triples",
                facts.len()
            )));
        }
        let mut g = KnowledgeGraph::new(lang.clone());
        for &(h, r, t) in &facts {
            g.add_fact(&enames[h], &rnames[r], &enames[t]);
        }
        graphs.push(g);
    }
    Ok(SynthWorld {
        graphs,
        entity_names,
        relation_names,
        rules,
    })
}

/// Checks that every conclusion edge of `world.graphs[lang]` has a witnessing
/// two-step path. Returns the offending edges.
pub fn unwitnessed_conclusions(world: &SynthWorld, lang: usize) -> Vec<(String, String, String)> {
    let g = &world.graphs[lang];
    let name_of_rel: HashMap<&str, usize> = world
        .relation_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n[lang].as_str(), i))
        .collect();
    let facts: HashSet<(&str, usize, &str)> = g
        .triples()
        .iter()
        .map(|t| {
            (
                g.entity(t.head).surface.as_str(),
                name_of_rel[g.relation(t.relation).surface.as_str()],
                g.entity(t.tail).surface.as_str(),
            )
        })
        .collect();
    let mut bad = Vec::new();
    for &(a, r, c) in &facts {
        for &(r1, r2, r3) in &world.rules {
            if r != r3 {
                continue;
            }
            let witnessed = facts
                .iter()
                .any(|&(x, rr, b)| x == a && rr == r1 && facts.contains(&(b, r2, c)));
            if !witnessed {
                bad.push((a.to_string(), world.relation_names[r][lang].clone(), c.to_string()));
            }
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(pattern: Pattern, ne: usize, nr: usize, nt: usize, langs: usize) -> SynthSpec {
        SynthSpec {
            n_entities: ne,
            n_relations: nr,
            n_triples: nt,
            languages: language_tags(langs),
            pattern,
            seed: 11,
        }
    }

    #[test]
    fn small_random_graph() {
        let w = synth_generate(&spec(Pattern::Random, 4, 1, 3, 1)).unwrap();
        assert_eq!(w.graphs[0].triples().len(), 3);
    }

    #[test]
    fn compositional_edges_are_witnessed() {
        let w = synth_generate(&spec(Pattern::Compositional, 60, 6, 300, 2)).unwrap();
        for l in 0..2 {
            assert_eq!(w.graphs[l].triples().len(), 300);
            assert!(unwitnessed_conclusions(&w, l).is_empty());
        }
        let conclusions: usize = w.graphs[0]
            .triples()
            .iter()
            .filter(|t| {
                let name = &w.graphs[0].relation(t.relation).surface;
                w.rules.iter().any(|r| &w.relation_names[r.2][0] == name)
            })
            .count();
        assert!(conclusions > 0);
    }

    #[test]
    fn deterministic_under_seed() {
        let s = spec(Pattern::Compositional, 50, 3, 120, 3);
        assert_eq!(synth_generate(&s).unwrap(), synth_generate(&s).unwrap());
    }

    #[test]
    fn infeasible_spec_rejected() {
        assert!(synth_generate(&spec(Pattern::Random, 2, 1, 5, 1)).is_err());
        assert!(synth_generate(&spec(Pattern::Compositional, 10, 2, 5, 1)).is_err());
    }

    #[test]
    fn alignment_pairs_cover_shared_entities() {
        let w = synth_generate(&spec(Pattern::Random, 30, 2, 60, 2)).unwrap();
        let pairs = w.alignment_pairs(0, 1);
        assert!(!pairs.is_empty());
        for (a, b) in &pairs {
            assert!(w.graphs[0].entity_id(a, "de").is_some());
            assert!(w.graphs[1].entity_id(b, "fi").is_some());
        }
    }
}
