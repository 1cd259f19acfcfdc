//! Embedding baselines (TransE, RotatE, ComplEx) trained with uniform
//! negative corruption, for comparison rows next to the generative model.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{derive_seed, Array, OptimizerState, ParamId, ParamSet, Tape};
use crate::objectives::{global_score, score_rows, ScoreVariant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Transe,
    Rotate,
    Complex,
}

impl BaselineKind {
    fn variant(self) -> ScoreVariant {
        match self {
            BaselineKind::Transe => ScoreVariant::TranseL1,
            BaselineKind::Rotate => ScoreVariant::Rotate,
            BaselineKind::Complex => ScoreVariant::Complex,
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "transe" => Ok(Self::Transe),
            "rotate" => Ok(Self::Rotate),
            "complex" => Ok(Self::Complex),
            o => Err(format!("unknown baseline `{o}` (transe|rotate|complex)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    /// Embedding width (even; complex variants use halves as re/im).
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Ranking margin for TransE/RotatE.
    pub margin: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind) -> Self {
        BaselineConfig {
            kind,
            dim: 32,
            epochs: 200,
            lr: 0.01,
            margin: 2.0,
            batch_size: 128,
            seed: 0,
        }
    }
}

/// Trained entity and relation tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub kind: BaselineKind,
    pub dim: usize,
    pub entities: Vec<f64>,
    pub relations: Vec<f64>,
}

impl EmbeddingModel {
    fn ent(&self, e: u32) -> &[f64] {
        &self.entities[e as usize * self.dim..(e as usize + 1) * self.dim]
    }

    fn rel(&self, r: u32) -> &[f64] {
        &self.relations[r as usize * self.dim..(r as usize + 1) * self.dim]
    }

    /// Lower is better.
    pub fn score(&self, h: u32, r: u32, t: u32) -> f64 {
        global_score(self.ent(h), self.rel(r), self.ent(t), self.kind.variant()).expect("dims checked at training time")
    }

    /// Candidates sorted best-first (ties by smaller id).
    pub fn rank_tails(&self, h: u32, r: u32, candidates: &[u32]) -> Vec<(u32, f64)> {
        let mut v: Vec<(u32, f64)> = candidates.iter().map(|&t| (t, self.score(h, r, t))).collect();
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        v
    }

    /// 1-based rank of `gold` among `candidates` (`None` if absent).
    pub fn rank_of(&self, h: u32, r: u32, gold: u32, candidates: &[u32]) -> Option<usize> {
        self.rank_tails(h, r, candidates).iter().position(|&(t, _)| t == gold).map(|p| p + 1)
    }
}

/// Trains a baseline on `(head, relation, tail)` id triples.
pub fn train_embedding_baseline(
    triples: &[(u32, u32, u32)],
    n_entities: usize,
    n_relations: usize,
    cfg: &BaselineConfig,
) -> Result<EmbeddingModel> {
    if triples.is_empty() || n_entities == 0 || n_relations == 0 {
        return Err(Error::Contract("baseline needs a nonempty graph".into()));
    }
    if cfg.dim == 0 || (cfg.kind != BaselineKind::Transe && !cfg.dim.is_multiple_of(2)) {
        return Err(Error::Contract(format!("invalid embedding dim {}", cfg.dim)));
    }
    if let Some(t) = triples
        .iter()
        .find(|t| t.0 as usize >= n_entities || t.2 as usize >= n_entities || t.1 as usize >= n_relations)
    {
        return Err(Error::Contract(format!("triple {t:?} out of range")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "baseline-init", 0));
    let init = Normal::new(0.0, 1.0 / (cfg.dim as f64).sqrt()).expect("valid std");
    let mut params = ParamSet::new();
    let mut table = |n: usize| -> Result<Array> {
        Array::matrix(n, cfg.dim, (0..n * cfg.dim).map(|_| init.sample(&mut rng)).collect())
    };
    let ent = params.push("entities", table(n_entities)?);
    let rel = params.push("relations", table(n_relations)?);
    let mut opt = OptimizerState::adam(&params, cfg.lr);
    let variant = cfg.kind.variant();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "baseline-epoch", epoch as u64));
        let mut order: Vec<usize> = (0..triples.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let (mut hs, mut rs, mut ts) = (Vec::new(), Vec::new(), Vec::new());
            let (mut nh, mut nt) = (Vec::new(), Vec::new());
            for &i in chunk {
                let (h, r, t) = triples[i];
                hs.push(h as usize);
                rs.push(r as usize);
                ts.push(t as usize);
                let e = rng.random_range(0..n_entities);
                if rng.random_bool(0.5) {
                    nh.push(e);
                    nt.push(t as usize);
                } else {
                    nh.push(h as usize);
                    nt.push(e);
                }
            }
            let mut tape = Tape::new();
            let loss = batch_loss(&mut tape, &params, ent, rel, (&hs, &rs, &ts), (&nh, &nt), variant, cfg)?;
            if !tape.value(loss).item().is_finite() {
                return Err(Error::NonFinite(format!("baseline loss at epoch {epoch}")));
            }
            params.zero_grad();
            tape.backward(loss, &mut params)?;
            opt.step(&mut params)?;
        }
    }
    Ok(EmbeddingModel {
        kind: cfg.kind,
        dim: cfg.dim,
        entities: params.get(ent).data().to_vec(),
        relations: params.get(rel).data().to_vec(),
    })
}

type Cols<'a> = (&'a [usize], &'a [usize], &'a [usize]);

#[allow(clippy::too_many_arguments)]
fn batch_loss(
    tape: &mut Tape,
    params: &ParamSet,
    ent: ParamId,
    rel: ParamId,
    pos: Cols<'_>,
    neg: (&[usize], &[usize]),
    variant: ScoreVariant,
    cfg: &BaselineConfig,
) -> Result<crate::numerics::Var> {
    let e = tape.param(params, ent);
    let r = tape.param(params, rel);
    let h = tape.select_rows(e, pos.0)?;
    let rr = tape.select_rows(r, pos.1)?;
    let t = tape.select_rows(e, pos.2)?;
    let nh = tape.select_rows(e, neg.0)?;
    let nt = tape.select_rows(e, neg.1)?;
    let sp = score_rows(tape, h, rr, t, variant)?;
    let sn = score_rows(tape, nh, rr, nt, variant)?;
    if variant == ScoreVariant::Complex {
        // logistic loss: positives want a large real score (small s).
        let a = tape.softplus(sp);
        let nsn = tape.neg(sn);
        let b = tape.softplus(nsn);
        let s = tape.add(a, b)?;
        tape.mean(s)
    } else {
        let d = tape.sub(sp, sn)?;
        let d = tape.add_scalar(d, cfg.margin);
        let hinge = tape.relu(d);
        tape.mean(hinge)
    }
}
