//! Training objectives: generation cross-entropy, the translational global
//! loss over role-marker states and the JSD mutual-information local loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Bound, Forward, Model};
use crate::numerics::kernels::softplus;
use crate::numerics::{Tape, Var};
use crate::vocab::SerializedTriple;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreVariant {
    #[default]
    TranseL1,
    TranseL2,
    Rotate,
    Complex,
}

impl std::str::FromStr for ScoreVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "transe_l1" | "transe" => Ok(Self::TranseL1),
            "transe_l2" => Ok(Self::TranseL2),
            "rotate" => Ok(Self::Rotate),
            "complex" => Ok(Self::Complex),
            o => Err(format!("unknown score variant `{o}` (transe_l1|transe_l2|rotate|complex)")),
        }
    }
}

impl std::fmt::Display for ScoreVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::TranseL1 => "transe_l1",
            Self::TranseL2 => "transe_l2",
            Self::Rotate => "rotate",
            Self::Complex => "complex",
        })
    }
}

/// Which positive term the JSD estimator uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JsdForm {
    /// `E_pos[-sp(-T)] - E_neg[sp(T)]`.
    #[default]
    Standard,
    /// `E_pos[-sp(T)] - E_neg[sp(T)]`, kept for comparison only.
    Printed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub score_variant: ScoreVariant,
    #[serde(default)]
    pub jsd_form: JsdForm,
    /// Use `max(0, s_pos - s_neg + gamma)` with in-batch corrupted tails
    /// instead of the plain `score + gamma`.
    #[serde(default)]
    pub margin: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.001,
            beta: 0.005,
            gamma: 0.0,
            score_variant: ScoreVariant::TranseL1,
            jsd_form: JsdForm::Standard,
            margin: false,
        }
    }
}

/// Per-step loss values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_g: f64,
    pub l_p: f64,
    pub l_e: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Set when the local loss was skipped (batch of one).
    pub local_skipped: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_norms: Option<GradNorms>,
}

/// Gradient norm of the total loss and, when requested, of each weighted
/// component on its own.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradNorms {
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_e: Option<f64>,
}

// ---------------------------------------------------------------------------
// Plain (reference) versions

fn halves(x: &[f64]) -> (&[f64], &[f64]) {
    x.split_at(x.len() / 2)
}

/// Score of one role-state triple; lower is better for every variant.
pub fn global_score(h: &[f64], r: &[f64], t: &[f64], variant: ScoreVariant) -> Result<f64> {
    if h.len() != r.len() || h.len() != t.len() {
        return Err(Error::shape("global_score: dimension mismatch"));
    }
    match variant {
        ScoreVariant::TranseL1 => Ok(h.iter().zip(r).zip(t).map(|((a, b), c)| (a + b - c).abs()).sum()),
        ScoreVariant::TranseL2 => Ok(h
            .iter()
            .zip(r)
            .zip(t)
            .map(|((a, b), c)| (a + b - c) * (a + b - c))
            .sum::<f64>()
            .sqrt()),
        ScoreVariant::Rotate | ScoreVariant::Complex => {
            if !h.len().is_multiple_of(2) {
                return Err(Error::contract(format!(
                    "{variant} score needs an even dimension, got {}",
                    h.len()
                )));
            }
            let ((hre, him), (rre, rim), (tre, tim)) = (halves(h), halves(r), halves(t));
            let mut s = 0.0;
            for k in 0..hre.len() {
                if variant == ScoreVariant::Rotate {
                    let m = rre[k].hypot(rim[k]);
                    let (u, v) = if m == 0.0 { (1.0, 0.0) } else { (rre[k] / m, rim[k] / m) };
                    let re = hre[k] * u - him[k] * v;
                    let im = hre[k] * v + him[k] * u;
                    s += (re - tre[k]).abs() + (im - tim[k]).abs();
                } else {
                    s += hre[k] * rre[k] * tre[k] + him[k] * rre[k] * tim[k] + hre[k] * rim[k] * tim[k]
                        - him[k] * rim[k] * tre[k];
                }
            }
            Ok(if variant == ScoreVariant::Complex { -s } else { s })
        }
    }
}

/// Discriminator `T = <mean of query states, h_T> / sqrt(d)`.
pub fn discriminator(query_states: &[&[f64]], h_t: &[f64]) -> Result<f64> {
    if query_states.is_empty() {
        return Err(Error::contract("discriminator: empty query region"));
    }
    let d = h_t.len();
    let mut mean = vec![0.0; d];
    for q in query_states {
        if q.len() != d {
            return Err(Error::shape("discriminator: dimension mismatch"));
        }
        mean.iter_mut().zip(*q).for_each(|(m, v)| *m += v);
    }
    let n = query_states.len() as f64;
    Ok(mean.iter().zip(h_t).map(|(m, t)| (m / n) * t).sum::<f64>() / (d as f64).sqrt())
}

/// JSD lower-bound estimate from discriminator values on positive and
/// negative pairs.
pub fn jsd_mi_estimate(t_pos: &[f64], t_neg: &[f64], form: JsdForm) -> Result<f64> {
    if t_pos.is_empty() || t_neg.is_empty() {
        return Err(Error::contract("jsd estimate needs positive and negative pairs"));
    }
    let pos = t_pos
        .iter()
        .map(|&t| match form {
            JsdForm::Standard => -softplus(-t),
            JsdForm::Printed => -softplus(t),
        })
        .sum::<f64>()
        / t_pos.len() as f64;
    let neg = t_neg.iter().map(|&t| softplus(t)).sum::<f64>() / t_neg.len() as f64;
    Ok(pos - neg)
}

/// Combines finite component values into the weighted total.
pub fn total_loss(l_g: f64, l_p: f64, l_e: f64, w: &LossWeights) -> Result<LossReport> {
    for (name, v) in [("l_g", l_g), ("l_p", l_p), ("l_e", l_e)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} = {v}")));
        }
    }
    let mut total = l_g;
    if w.alpha != 0.0 {
        total += w.alpha * l_p;
    }
    if w.beta != 0.0 {
        total += w.beta * l_e;
    }
    Ok(LossReport {
        l_g,
        l_p,
        l_e,
        total,
        alpha: w.alpha,
        beta: w.beta,
        local_skipped: false,
        grad_norms: None,
    })
}

/// Random cyclic permutation (Sattolo): `perm[i] != i` for every `i` when
/// `n >= 2`.
pub fn derangement(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    if n < 2 {
        return p;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        p.swap(i, j);
    }
    p
}

// ---------------------------------------------------------------------------
// Differentiable versions

/// Row-wise scores `[n]` for role-state matrices `[n x d]`.
pub fn score_rows(tape: &mut Tape, h: Var, r: Var, t: Var, variant: ScoreVariant) -> Result<Var> {
    match variant {
        ScoreVariant::TranseL1 | ScoreVariant::TranseL2 => {
            let hr = tape.add(h, r)?;
            let diff = tape.sub(hr, t)?;
            if variant == ScoreVariant::TranseL1 {
                tape.row_l1(diff)
            } else {
                tape.row_l2(diff)
            }
        }
        ScoreVariant::Rotate | ScoreVariant::Complex => {
            let (_, d) = tape.value(h).dims2()?;
            if d % 2 != 0 {
                return Err(Error::contract(format!("{variant} score needs an even dimension, got {d}")));
            }
            let k = d / 2;
            let r = if variant == ScoreVariant::Rotate { tape.unit_phase(r)? } else { r };
            let hre = tape.slice_cols(h, 0, k)?;
            let him = tape.slice_cols(h, k, d)?;
            let rre = tape.slice_cols(r, 0, k)?;
            let rim = tape.slice_cols(r, k, d)?;
            let tre = tape.slice_cols(t, 0, k)?;
            let tim = tape.slice_cols(t, k, d)?;
            if variant == ScoreVariant::Rotate {
                let a = tape.mul(hre, rre)?;
                let b = tape.mul(him, rim)?;
                let re = tape.sub(a, b)?;
                let a = tape.mul(hre, rim)?;
                let b = tape.mul(him, rre)?;
                let im = tape.add(a, b)?;
                let rot = tape.concat_cols(&[re, im])?;
                let diff = tape.sub(rot, t)?;
                tape.row_l1(diff)
            } else {
                let hr_re = tape.mul(hre, rre)?;
                let hr_im = tape.mul(him, rre)?;
                let hi_re = tape.mul(hre, rim)?;
                let hi_im = tape.mul(him, rim)?;
                let x1 = tape.mul(hr_re, tre)?;
                let x2 = tape.mul(hr_im, tim)?;
                let x3 = tape.mul(hi_re, tim)?;
                let x4 = tape.mul(hi_im, tre)?;
                let s = tape.add(x1, x2)?;
                let s = tape.add(s, x3)?;
                let s = tape.sub(s, x4)?;
                let s = tape.sum_cols(s)?;
                Ok(tape.neg(s))
            }
        }
    }
}

/// Global loss: mean of `score + gamma`, or the margin form when enabled and
/// a corruption permutation is available.
pub fn global_loss(tape: &mut Tape, h: Var, r: Var, t: Var, w: &LossWeights, perm: Option<&[usize]>) -> Result<Var> {
    let pos = score_rows(tape, h, r, t, w.score_variant)?;
    match perm {
        Some(p) if w.margin && p.len() >= 2 => {
            let t_neg = tape.select_rows(t, p)?;
            let neg = score_rows(tape, h, r, t_neg, w.score_variant)?;
            let diff = tape.sub(pos, neg)?;
            let shifted = tape.add_scalar(diff, w.gamma);
            let hinge = tape.relu(shifted);
            tape.mean(hinge)
        }
        _ => {
            let m = tape.mean(pos)?;
            Ok(tape.add_scalar(m, w.gamma))
        }
    }
}

/// Discriminator values `[n]` for row-paired query means and tail states.
pub fn discriminator_rows(tape: &mut Tape, q_mean: Var, h_t: Var) -> Result<Var> {
    let (_, d) = tape.value(h_t).dims2()?;
    let prod = tape.mul(q_mean, h_t)?;
    let s = tape.sum_cols(prod)?;
    Ok(tape.scale(s, 1.0 / (d as f64).sqrt()))
}

/// Local loss `E_neg - E_pos`: negatives pair each tail state with the query
/// of `perm[i]`.
pub fn local_loss(tape: &mut Tape, q_mean: Var, h_t: Var, perm: &[usize], form: JsdForm) -> Result<Var> {
    let (n, _) = tape.value(q_mean).dims2()?;
    if n < 2 || perm.len() != n {
        return Err(Error::contract("local loss needs a batch of at least two"));
    }
    if perm.iter().enumerate().any(|(i, &j)| i == j) {
        return Err(Error::contract("negative sampler paired an example with itself"));
    }
    let t_pos = discriminator_rows(tape, q_mean, h_t)?;
    let q_neg = tape.select_rows(q_mean, perm)?;
    let t_neg = discriminator_rows(tape, q_neg, h_t)?;
    // E_pos = mean(-sp(-T)) (or -sp(T)); E_neg = mean(sp(T_neg)).
    let pos_in = match form {
        JsdForm::Standard => tape.neg(t_pos),
        JsdForm::Printed => t_pos,
    };
    let sp_pos = tape.softplus(pos_in);
    let e_pos_neg = tape.mean(sp_pos)?; // = -E_pos
    let sp_neg = tape.softplus(t_neg);
    let e_neg = tape.mean(sp_neg)?;
    tape.add(e_neg, e_pos_neg)
}

/// Token-mean NLL of the tail tokens and `[E]` over the batch.
pub fn generation_loss(
    tape: &mut Tape,
    model: &Model,
    bound: &Bound,
    fwd: &Forward,
    seqs: &[&SerializedTriple],
) -> Result<Var> {
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (k, s) in seqs.iter().enumerate() {
        for i in s.query_len..s.len() {
            rows.push(fwd.row(k, i - 1));
            targets.push(s.ids[i] as usize);
        }
    }
    if rows.is_empty() {
        return Err(Error::contract("generation loss: empty target region"));
    }
    let h = tape.select_rows(fwd.hidden, &rows)?;
    let logits = model.logits(tape, bound, h)?;
    let nll = tape.cross_entropy(logits, &targets)?;
    tape.mean(nll)
}

/// Tape handles of the three components and the weighted total.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub l_g: Var,
    pub l_p: Var,
    pub l_e: Option<Var>,
    pub total: Var,
}

/// Builds all components on the tape for one forward pass. `perm` is the
/// in-batch negative assignment (ignored for a batch of one).
pub fn build_losses(
    tape: &mut Tape,
    model: &Model,
    bound: &Bound,
    fwd: &Forward,
    seqs: &[&SerializedTriple],
    w: &LossWeights,
    perm: &[usize],
) -> Result<LossVars> {
    let l_g = generation_loss(tape, model, bound, fwd, seqs)?;
    let rows = |f: &dyn Fn(&SerializedTriple) -> usize| -> Vec<usize> {
        seqs.iter().enumerate().map(|(k, s)| fwd.row(k, f(s))).collect()
    };
    let h = tape.select_rows(fwd.hidden, &rows(&|s| s.pos_h))?;
    let r = tape.select_rows(fwd.hidden, &rows(&|s| s.pos_r))?;
    let t = tape.select_rows(fwd.hidden, &rows(&|s| s.pos_t))?;
    let l_p = global_loss(tape, h, r, t, w, Some(perm))?;
    let l_e = if seqs.len() >= 2 {
        let groups: Vec<Vec<usize>> = seqs
            .iter()
            .enumerate()
            .map(|(k, s)| s.query_word_positions().into_iter().map(|i| fwd.row(k, i)).collect())
            .collect();
        let q_mean = tape.gather_mean(fwd.hidden, &groups)?;
        Some(local_loss(tape, q_mean, t, perm, w.jsd_form)?)
    } else {
        None
    };
    let mut total = l_g;
    if w.alpha != 0.0 {
        let x = tape.scale(l_p, w.alpha);
        total = tape.add(total, x)?;
    }
    if let (Some(le), true) = (l_e, w.beta != 0.0) {
        let x = tape.scale(le, w.beta);
        total = tape.add(total, x)?;
    }
    Ok(LossVars { l_g, l_p, l_e, total })
}

/// Reads component values off the tape; a non-finite component aborts with
/// an error naming it.
pub fn report(tape: &Tape, v: &LossVars, w: &LossWeights) -> Result<LossReport> {
    let l_e = v.l_e.map_or(0.0, |x| tape.value(x).item());
    let mut r = total_loss(tape.value(v.l_g).item(), tape.value(v.l_p).item(), l_e, w)?;
    r.total = tape.value(v.total).item();
    r.local_skipped = v.l_e.is_none();
    Ok(r)
}
