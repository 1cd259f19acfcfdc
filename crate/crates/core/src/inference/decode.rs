use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::trie::{EntityTrie, ROOT};
use crate::error::{Error, Result};
use crate::model::{DecoderState, Model};
use crate::numerics::kernels::log_softmax;
use crate::vocab::{SerializedTriple, Specials, TokenId};

/// One ranked entity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub entity: u32,
    /// Summed log-probability of the entity tokens and `[E]`.
    pub log_prob: f64,
    pub tokens: Vec<TokenId>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BeamResult {
    pub predictions: Vec<Prediction>,
    /// Some hypotheses could not finish within the sequence-length limit and
    /// fewer than `k` entities were found.
    pub truncated: bool,
}

/// Best first: higher score, then lexicographically smaller token sequence
/// (so a shorter prefix wins a tie).
fn rank_order(a_score: f64, a_tokens: &[TokenId], b_score: f64, b_tokens: &[TokenId]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_tokens.cmp(b_tokens))
}

fn sort_predictions(v: &mut [Prediction]) {
    v.sort_by(|a, b| rank_order(a.log_prob, &a.tokens, b.log_prob, &b.tokens));
}

struct Hyp {
    state: DecoderState,
    node: usize,
    score: f64,
}

struct Expansion {
    parent: usize,
    /// `None` = emit `[E]` and finish.
    token: Option<TokenId>,
    score: f64,
    /// Entity tokens after the expansion (used for tie-breaking).
    tokens: Vec<TokenId>,
}

fn check_query(query: &SerializedTriple) -> Result<()> {
    if query.ids.len() < query.query_len || query.query_len == 0 {
        return Err(Error::Contract("query prefix must end at the [T] marker".into()));
    }
    Ok(())
}

/// Trie-constrained beam search. Keeps `beam_width` live hypotheses; an
/// expansion that emits `[E]` takes a slot and is frozen. Scores are summed
/// log-probabilities without length normalisation. Stops once `k` entities
/// are finished and no live hypothesis can still beat the k-th of them.
pub fn constrained_beam_search(
    model: &Model,
    query: &SerializedTriple,
    trie: &EntityTrie,
    beam_width: usize,
    k: usize,
) -> Result<BeamResult> {
    if k == 0 || beam_width < k {
        return Err(Error::Contract(format!("need beam_width >= k >= 1, got {beam_width} and {k}")));
    }
    check_query(query)?;
    let end = Specials::FIXED.end;
    let max_len = model.config().max_seq_len;
    let mut active = vec![Hyp {
        state: model.start_decoding(query)?,
        node: ROOT,
        score: 0.0,
    }];
    let mut finished: Vec<Prediction> = Vec::new();
    let mut truncated = false;
    while !active.is_empty() {
        let mut exps = Vec::new();
        for (pi, h) in active.iter().enumerate() {
            let lp = model.state_log_probs(&h.state);
            let len = h.state.len();
            let prefix = h.state.generated();
            if trie.terminal(h.node).is_some() {
                if len < max_len {
                    exps.push(Expansion {
                        parent: pi,
                        token: None,
                        score: h.score + lp[end as usize],
                        tokens: prefix.to_vec(),
                    });
                } else {
                    truncated = true;
                }
            }
            for (tok, _) in trie.children(h.node) {
                // room for this token and a closing [E]
                if len + 2 > max_len {
                    truncated = true;
                    continue;
                }
                let mut tokens = prefix.to_vec();
                tokens.push(tok);
                exps.push(Expansion {
                    parent: pi,
                    token: Some(tok),
                    score: h.score + lp[tok as usize],
                    tokens,
                });
            }
        }
        // Finishing expansions carry the implicit [E] (id 7, below every
        // corpus token) for tie-breaking, which puts shorter entities first.
        exps.sort_by(|a, b| {
            let ka = tie_key(a, end);
            let kb = tie_key(b, end);
            rank_order(a.score, &ka, b.score, &kb)
        });
        exps.truncate(beam_width);
        let mut next = Vec::new();
        for e in exps {
            let parent = &active[e.parent];
            match e.token {
                None => finished.push(Prediction {
                    entity: trie.terminal(parent.node).expect("terminal checked"),
                    log_prob: e.score,
                    tokens: e.tokens,
                }),
                Some(tok) => {
                    let mut state = parent.state.clone();
                    model.push_token(&mut state, tok)?;
                    next.push(Hyp {
                        state,
                        node: trie.step(parent.node, tok).expect("child exists"),
                        score: e.score,
                    });
                }
            }
        }
        active = next;
        if finished.len() >= k {
            sort_predictions(&mut finished);
            let kth = finished[k - 1].log_prob;
            let best_live = active.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
            if best_live < kth {
                break;
            }
        }
    }
    sort_predictions(&mut finished);
    let mut seen = std::collections::HashSet::new();
    finished.retain(|p| seen.insert(p.entity));
    finished.truncate(k);
    Ok(BeamResult {
        truncated: truncated && finished.len() < k,
        predictions: finished,
    })
}

fn tie_key(e: &Expansion, end: TokenId) -> Vec<TokenId> {
    let mut v = e.tokens.clone();
    if e.token.is_none() {
        v.push(end);
    }
    v
}

/// Beam search with width 1 and k 1.
pub fn greedy_decode(model: &Model, query: &SerializedTriple, trie: &EntityTrie) -> Result<Option<Prediction>> {
    Ok(constrained_beam_search(model, query, trie, 1, 1)?.predictions.into_iter().next())
}

/// Appends a candidate tail and `[E]` to a query prefix.
pub fn complete_query(query: &SerializedTriple, tail: &[TokenId]) -> SerializedTriple {
    let q = query.query_len;
    let mut ids = query.ids[..q].to_vec();
    ids.extend_from_slice(tail);
    ids.push(Specials::FIXED.end);
    SerializedTriple {
        pos_e: Some(ids.len() - 1),
        tail_span: q..q + tail.len(),
        ids,
        ..query.clone()
    }
}

/// Scores every candidate by teacher-forced summed log-probability of its
/// tokens plus `[E]` (one full forward pass per candidate) and sorts with
/// the beam's order. Slow; serves as the exact reference.
pub fn rank_exhaustive(model: &Model, query: &SerializedTriple, candidates: &[(u32, Vec<TokenId>)]) -> Result<Vec<Prediction>> {
    check_query(query)?;
    let mut out = Vec::with_capacity(candidates.len());
    for (id, toks) in candidates {
        let s = complete_query(query, toks);
        let e = model.encode_triple(&s)?;
        let mut total = 0.0;
        for i in s.query_len..s.len() {
            let lp = log_softmax(&model.next_token_logits(&e, i)?);
            total += lp[s.ids[i] as usize];
        }
        out.push(Prediction {
            entity: *id,
            log_prob: total,
            tokens: toks.clone(),
        });
    }
    sort_predictions(&mut out);
    Ok(out)
}

/// Exact scores for every entity of the trie via a depth-first walk that
/// shares decoder work across common prefixes. Same values and order as
/// [`rank_exhaustive`], at a fraction of the cost.
pub fn rank_trie(model: &Model, query: &SerializedTriple, trie: &EntityTrie) -> Result<Vec<Prediction>> {
    check_query(query)?;
    let end = Specials::FIXED.end as usize;
    let max_len = model.config().max_seq_len;
    let mut state = model.start_decoding(query)?;
    let mut out = Vec::with_capacity(trie.len());
    // (node, score, depth) with the decoder state positioned at `depth`.
    #[allow(clippy::too_many_arguments)]
    fn walk(
        model: &Model,
        trie: &EntityTrie,
        node: usize,
        score: f64,
        state: &mut DecoderState,
        out: &mut Vec<Prediction>,
        end: usize,
        max_len: usize,
    ) -> Result<()> {
        let lp = model.state_log_probs(state);
        if let Some(e) = trie.terminal(node) {
            if state.len() < max_len {
                out.push(Prediction {
                    entity: e,
                    log_prob: score + lp[end],
                    tokens: state.generated().to_vec(),
                });
            }
        }
        let len = state.len();
        for (tok, child) in trie.children(node) {
            if len + 2 > max_len {
                continue;
            }
            model.push_token(state, tok)?;
            walk(model, trie, child, score + lp[tok as usize], state, out, end, max_len)?;
            state.truncate(len);
        }
        Ok(())
    }
    walk(model, trie, ROOT, 0.0, &mut state, &mut out, end, max_len)?;
    sort_predictions(&mut out);
    Ok(out)
}
