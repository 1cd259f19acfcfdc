//! Finite-difference checks of every differentiable path.

use kcgc_core::model::{MaskMode, Model, ModelConfig, SeqView};
use kcgc_core::numerics::gradcheck::{check, FD_STEP};
use kcgc_core::numerics::{Array, ParamSet, Segment, Tape, Var};
use kcgc_core::objectives::{
    build_losses, derangement, global_loss, local_loss, JsdForm, LossVars, LossWeights, ScoreVariant,
};
use kcgc_core::vocab::{SerializedTriple, TokenizerMode, Vocabulary};
use kcgc_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

const TOL: f64 = 1e-3;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array {
    Array::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn params(seed: u64, shapes: &[(usize, usize)]) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    for (i, &(r, c)) in shapes.iter().enumerate() {
        p.push(format!("p{i}"), random(&mut rng, r, c));
    }
    p
}

fn assert_ok(name: &str, p: &ParamSet, f: impl Fn(&mut Tape, &ParamSet) -> Result<Var>) {
    let r = check(p, FD_STEP, f).unwrap();
    assert!(r.checked > 0);
    assert!(r.max_rel_err < TOL, "{name}: {:?} (max rel err {})", r.worst, r.max_rel_err);
}

#[test]
fn elementwise_and_reduction_ops() {
    let p = params(1, &[(3, 4), (3, 4), (4, 5), (1, 4)]);
    let ids: Vec<_> = p.ids().collect();
    assert_ok("mixed", &p, |t, p| {
        let a = t.param(p, ids[0]);
        let b = t.param(p, ids[1]);
        let w = t.param(p, ids[2]);
        let bias = t.param(p, ids[3]);
        let x = t.mul(a, b)?;
        let x = t.add_row(x, bias)?;
        let y = t.sub(x, a)?;
        let y = t.gelu(y);
        let z = t.matmul(y, w)?;
        let zt = t.matmul_t(a, b)?;
        let s = t.softplus(z);
        let sq = t.square(zt);
        let sq = t.add_scalar(sq, 1.0);
        let r = t.sqrt(sq)?;
        let ab = t.abs(a);
        let ab = t.add_scalar(ab, 2.0);
        let dv = t.div(b, ab)?;
        let l1 = t.row_l1(dv)?;
        let l2 = t.row_l2(y)?;
        let sm = t.softmax_rows(z)?;
        let sl = t.slice_cols(sm, 1, 4)?;
        let cat = t.concat_cols(&[sl, s])?;
        let rows = t.concat_rows(&[cat, cat])?;
        let sel = t.select_rows(rows, &[0, 5, 2, 2])?;
        let gm = t.gather_mean(sel, &[vec![0, 1], vec![2, 3, 1]])?;
        let sc = t.sum_cols(gm)?;
        let relu = t.relu(z);
        let terms = [t.sum(sc), t.sum(l1), t.sum(l2), t.sum(r), t.mean(relu)?];
        let mut acc = terms[0];
        for &v in &terms[1..] {
            acc = t.add(acc, v)?;
        }
        let n = t.neg(acc);
        Ok(t.scale(n, 0.5))
    });
}

#[test]
fn layer_norm_cross_entropy_unit_phase() {
    let p = params(2, &[(4, 6), (1, 6), (1, 6)]);
    let ids: Vec<_> = p.ids().collect();
    assert_ok("ln+ce", &p, |t, p| {
        let x = t.param(p, ids[0]);
        let g = t.param(p, ids[1]);
        let b = t.param(p, ids[2]);
        let y = t.layer_norm(x, g, b)?;
        let ce = t.cross_entropy(y, &[0, 5, 2, 3])?;
        let u = t.unit_phase(x)?;
        let uy = t.mul(u, y)?;
        let s = t.sum(uy);
        let m = t.mean(ce)?;
        t.add(m, s)
    });
}

#[test]
fn attention_op() {
    let p = params(3, &[(7, 4), (7, 4), (7, 4)]);
    let ids: Vec<_> = p.ids().collect();
    let tri = |n: usize| Arc::new((0..n * n).map(|k| k % n <= k / n).collect::<Vec<bool>>());
    let segs = vec![
        Segment {
            offset: 0,
            len: 3,
            visible: Arc::new(vec![true; 9]),
        },
        Segment {
            offset: 3,
            len: 4,
            visible: tri(4),
        },
    ];
    assert_ok("attention", &p, |t, p| {
        let (q, k, v) = (t.param(p, ids[0]), t.param(p, ids[1]), t.param(p, ids[2]));
        let a = t.attention(q, k, v, &segs, 2)?;
        let sq = t.square(a);
        let s = t.sum(sq);
        let s2 = t.sum(a);
        t.add(s, s2)
    });
}

fn triples(v: &Vocabulary) -> Vec<SerializedTriple> {
    [("ab", "rel", "cd"), ("bca", "rx", "a"), ("d", "rel", "bb")]
        .iter()
        .map(|(h, r, t)| v.serialize_triple(h, r, t, 35).unwrap())
        .collect()
}

fn tiny_model() -> (Model, Vec<SerializedTriple>) {
    let v = Vocabulary::build(["ab", "cd", "bca", "a", "d", "bb", "rel", "rx"], TokenizerMode::Char).unwrap();
    let mut c = ModelConfig::new(v.len());
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_model = 8;
    c.d_ff = 16;
    c.mask_mode = MaskMode::RoleSeparated;
    let mut m = Model::new(c, 9).unwrap();
    // Larger-than-default embeddings keep every path well away from zero.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for a in m.params.arrays_mut() {
        for x in a.data_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    (m, triples(&v))
}

fn model_check(name: &str, w: LossWeights, pick: impl Fn(&LossVars) -> Var) {
    let (model, seqs) = tiny_model();
    let perm = derangement(seqs.len(), 1);
    let config = model.config().clone();
    assert_ok(name, &model.params, |tape, p| {
        let m = Model::from_params(config.clone(), p.clone())?;
        let b = m.bind(tape);
        let masks: Vec<_> = seqs.iter().map(|s| m.build_mask(s)).collect();
        let views: Vec<SeqView> = seqs
            .iter()
            .zip(&masks)
            .map(|(s, mk)| SeqView { ids: &s.ids, mask: mk })
            .collect();
        let fwd = m.forward(tape, &b, &views)?;
        let refs: Vec<&SerializedTriple> = seqs.iter().collect();
        let v = build_losses(tape, &m, &b, &fwd, &refs, &w, &perm)?;
        Ok(pick(&v))
    });
}

#[test]
fn generation_loss_gradients() {
    model_check("l_g", LossWeights::default(), |v| v.l_g);
}

#[test]
fn global_loss_gradients_all_variants() {
    for variant in [
        ScoreVariant::TranseL1,
        ScoreVariant::TranseL2,
        ScoreVariant::Rotate,
        ScoreVariant::Complex,
    ] {
        let w = LossWeights {
            score_variant: variant,
            ..Default::default()
        };
        model_check(&format!("l_p/{variant}"), w, |v| v.l_p);
    }
}

#[test]
fn local_loss_gradients() {
    model_check("l_e", LossWeights::default(), |v| v.l_e.unwrap());
    let printed = LossWeights {
        jsd_form: JsdForm::Printed,
        ..Default::default()
    };
    model_check("l_e/printed", printed, |v| v.l_e.unwrap());
}

#[test]
fn total_loss_gradients() {
    let w = LossWeights {
        alpha: 0.3,
        beta: 0.7,
        ..Default::default()
    };
    model_check("total", w, |v| v.total);
}

#[test]
fn margin_variant_gradients() {
    let p = params(5, &[(4, 6), (4, 6), (4, 6)]);
    let ids: Vec<_> = p.ids().collect();
    let w = LossWeights {
        margin: true,
        gamma: 3.0,
        ..Default::default()
    };
    let perm = derangement(4, 2);
    assert_ok("margin", &p, |t, p| {
        let (h, r, tt) = (t.param(p, ids[0]), t.param(p, ids[1]), t.param(p, ids[2]));
        let g = global_loss(t, h, r, tt, &w, Some(&perm))?;
        let l = local_loss(t, h, tt, &perm, JsdForm::Standard)?;
        t.add(g, l)
    });
}
