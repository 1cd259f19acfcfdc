//! Acceptance suite: one PASS/FAIL line per criterion. Runs as a plain
//! binary (`harness = false`) so the lines are always printed.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use kcgc_core::evaluation::{evaluate, hits_at_k, EvalConfig, EvalReport};
use kcgc_core::inference::{constrained_beam_search, rank_exhaustive, EntityTrie, Prediction};
use kcgc_core::kgdata::{
    build_vocab, synth_generate, te_ratio_from_counts, DatasetSplit, Part, Pattern, SynthSpec,
};
use kcgc_core::model::{read_header, MaskMode, Model, ModelConfig, SeqView, VisibilityMask};
use kcgc_core::numerics::gradcheck::{check, FD_STEP};
use kcgc_core::objectives::{
    build_losses, derangement, discriminator, jsd_mi_estimate, JsdForm, LossVars, LossWeights, ScoreVariant,
};
use kcgc_core::training::{prepare_examples, train, TrainConfig, Trainer};
use kcgc_core::vocab::{SerializedTriple, TokenId, TokenizerMode, Vocabulary};
use kcgc_core::numerics::Var;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- 1

fn grad_model() -> (Model, Vec<SerializedTriple>) {
    let v = Vocabulary::build(["ab", "cd", "bca", "a", "d", "bb", "rel", "rx"], TokenizerMode::Char).unwrap();
    let mut c = ModelConfig::new(v.len());
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_model = 8;
    c.d_ff = 16;
    let mut m = Model::new(c, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for a in m.params.arrays_mut() {
        for x in a.data_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    let seqs = [("ab", "rel", "cd"), ("bca", "rx", "a"), ("d", "rel", "bb")]
        .iter()
        .map(|(h, r, t)| v.serialize_triple(h, r, t, 35).unwrap())
        .collect();
    (m, seqs)
}

fn grad_error(w: &LossWeights, pick: fn(&LossVars) -> Var) -> f64 {
    let (model, seqs) = grad_model();
    let perm = derangement(seqs.len(), 1);
    let config = model.config().clone();
    let r = check(&model.params, FD_STEP, |tape, p| {
        let m = Model::from_params(config.clone(), p.clone())?;
        let b = m.bind(tape);
        let masks: Vec<_> = seqs.iter().map(|s| m.build_mask(s)).collect();
        let views: Vec<SeqView> = seqs.iter().zip(&masks).map(|(s, mk)| SeqView { ids: &s.ids, mask: mk }).collect();
        let fwd = m.forward(tape, &b, &views)?;
        let refs: Vec<&SerializedTriple> = seqs.iter().collect();
        Ok(pick(&build_losses(tape, &m, &b, &fwd, &refs, w, &perm)?))
    })
    .unwrap();
    r.max_rel_err
}

fn c1_gradients() -> Outcome {
    let t0 = Instant::now();
    let mut worst: Vec<(String, f64)> = Vec::new();
    worst.push(("l_g".into(), grad_error(&LossWeights::default(), |v| v.l_g)));
    for s in [ScoreVariant::TranseL1, ScoreVariant::TranseL2, ScoreVariant::Rotate, ScoreVariant::Complex] {
        let w = LossWeights {
            score_variant: s,
            ..Default::default()
        };
        worst.push((format!("l_p/{s}"), grad_error(&w, |v| v.l_p)));
    }
    worst.push(("l_e".into(), grad_error(&LossWeights::default(), |v| v.l_e.unwrap())));
    let w = LossWeights {
        alpha: 0.3,
        beta: 0.7,
        ..Default::default()
    };
    worst.push(("total".into(), grad_error(&w, |v| v.total)));
    let secs = t0.elapsed().as_secs_f64();
    let max = worst.iter().map(|x| x.1).fold(0.0, f64::max);
    let detail = format!("max rel err {max:.2e} (< 1e-3) over {} checks in {secs:.1}s (< 60s)", worst.len());
    ensure(max < 1e-3, format!("{detail}; {worst:?}"))?;
    ensure(secs < 60.0, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 2

fn word(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..=hi);
    (0..n).map(|_| (b'a' + rng.random_range(0..6u8)) as char).collect()
}

fn c2_masks() -> Outcome {
    let v = Vocabulary::build(["abcdef"], TokenizerMode::Char).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bits = |m: &Model, s: &SerializedTriple, n: usize| -> Vec<u64> {
        let e = m.encode_triple(s).unwrap();
        (0..n).flat_map(|i| e.row(i).iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect()
    };
    let mut failures = 0;
    for case in 0..100u64 {
        let (h, r, t) = (word(&mut rng, 1, 5), word(&mut rng, 1, 4), word(&mut rng, 2, 6));
        let t2 = word(&mut rng, 1, 6);
        let a = v.serialize_triple(&h, &r, &t, 35).unwrap();
        let b = v.serialize_triple(&h, &r, &t2, 35).unwrap();
        let at = rng.random_range(0..t.len());
        let mut changed: Vec<char> = t.chars().collect();
        changed[at] = (b'a' + rng.random_range(0..6u8)) as char;
        let c = v.serialize_triple(&h, &r, &changed.iter().collect::<String>(), 35).unwrap();
        let mut cfg = ModelConfig::new(v.len());
        cfg.n_heads = 2;
        cfg.d_model = 8;
        cfg.d_ff = 16;
        let m = Model::new(cfg, case).unwrap();
        let p = a.tail_span.start + at;
        if bits(&m, &a, a.query_len) != bits(&m, &b, b.query_len) || bits(&m, &a, p) != bits(&m, &c, p) {
            failures += 1;
        }
    }
    // <s> [H] a b </s> </s> [R] c </s> </s> [T] d [E]
    let s = Vocabulary::build(["ab", "c", "d"], TokenizerMode::Char)
        .unwrap()
        .serialize_triple("ab", "c", "d", 35)
        .unwrap();
    let want = [
        "1111111111100",
        "0111000000000",
        "1111111111100",
        "1111111111100",
        "1111111111100",
        "1111111111100",
        "0000001100000",
        "1111111111100",
        "1111111111100",
        "1111111111100",
        "1111111111100",
        "1111111111110",
        "1111111111111",
    ];
    let rows = VisibilityMask::build(&s, MaskMode::RoleSeparated).to_rows();
    ensure(rows == want, format!("13-token matrix differs: {rows:?}"))?;
    ensure(failures == 0, format!("{failures} of 100 triples failed"))?;
    Ok("100 random triples: query invariance and tail causality hold; 13-token matrix matches".into())
}

// ---------------------------------------------------------------- 3

fn c3_decoder() -> Outcome {
    let vocab = Vocabulary::build(["abcdef", "rel"], TokenizerMode::Char).unwrap();
    let mut total_cands = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.random_range(1..=32);
        let mut words = BTreeSet::new();
        while words.len() < n {
            words.insert(word(&mut rng, 1, 4));
        }
        let cands: Vec<(u32, Vec<TokenId>)> =
            words.iter().enumerate().map(|(i, w)| (i as u32, vocab.encode(w))).collect();
        let mut c = ModelConfig::new(vocab.len());
        c.n_layers = 1;
        c.n_heads = 2;
        c.d_model = 8;
        c.d_ff = 16;
        let mut m = Model::new(c, seed).unwrap();
        if seed % 5 == 0 {
            // exact ties everywhere
            m.params.arrays_mut()[0].data_mut().iter_mut().for_each(|x| *x = 0.0);
        } else {
            for a in m.params.arrays_mut() {
                a.data_mut().iter_mut().for_each(|x| *x += rng.random_range(-0.5..0.5));
            }
        }
        let q = vocab.serialize_query(&word(&mut rng, 1, 3), "rel", 35).unwrap();
        let trie = EntityTrie::build(&cands).unwrap();
        let beam = constrained_beam_search(&m, &q, &trie, n, n).unwrap();
        let exact = rank_exhaustive(&m, &q, &cands).unwrap();
        let key = |p: &[Prediction]| p.iter().map(|x| (x.entity, x.log_prob.to_bits())).collect::<Vec<_>>();
        ensure(key(&beam.predictions) == key(&exact), format!("seed {seed}: beam ranking differs"))?;
        for p in &beam.predictions {
            ensure(cands.iter().any(|(id, t)| *id == p.entity && *t == p.tokens), format!("seed {seed}: output outside candidate set"))?;
        }
        total_cands += n;
    }
    Ok(format!("50 models, {total_cands} candidates: beam == exhaustive bit for bit, all outputs in set"))
}

// ---------------------------------------------------------------- 4

fn c4_memorization() -> Outcome {
    let spec = SynthSpec {
        n_entities: 40,
        n_relations: 5,
        n_triples: 50,
        languages: vec!["de".into()],
        pattern: Pattern::Random,
        seed: 1,
    };
    let g = synth_generate(&spec).unwrap().graphs.remove(0);
    let vocab = build_vocab(std::slice::from_ref(&g), TokenizerMode::Char).unwrap();
    let split = DatasetSplit::all_train(&g);
    let ex = prepare_examples(&g, split.indices(Part::Train), &vocab, 35).unwrap();
    let model = Model::new(ModelConfig::new(vocab.len()), 0).unwrap();
    let cfg = TrainConfig {
        batch_size: 16,
        epochs: 0,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(model, cfg, vocab.hash()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ec = EvalConfig {
        filtered: true,
        ..EvalConfig::default()
    };
    let raw = EvalConfig::default();
    let t0 = Instant::now();
    let (mut h1, mut epochs) = (0.0, 0);
    while epochs < 500 {
        epochs += 10;
        t.cfg.epochs = epochs;
        train(&mut t, &ex, dir.path(), None).unwrap();
        h1 = evaluate(&t.model, &vocab, &g, &split, Part::Train, &ec, "m").unwrap().0.macro_avg.hits1 / 100.0;
        if h1 >= 0.95 {
            break;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let raw_h1 = evaluate(&t.model, &vocab, &g, &split, Part::Train, &raw, "m").unwrap().0.macro_avg.hits1 / 100.0;
    let detail = format!(
        "{} triples: filtered Hits@1 {h1:.2} (raw {raw_h1:.2}) after {epochs} epochs, {secs:.0}s",
        g.triples().len()
    );
    ensure(h1 >= 0.95 && epochs <= 500 && secs < 300.0, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 5, 8, 9 (CLI)

fn kcgc(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_kcgc"))
        .args(args)
        .env("KCGC_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "kcgc {} failed ({}): {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn p(x: &Path) -> String {
    x.display().to_string()
}

fn resolved(dir: &Path) -> Vec<(String, String)> {
    std::fs::read_to_string(dir.join("config.resolved"))
        .unwrap()
        .lines()
        .map(|l| {
            let (k, v) = l.split_once(" = ").unwrap_or((l.trim_end_matches(" ="), ""));
            (k.trim().to_string(), v.trim().to_string())
        })
        .collect()
}

fn c5_ablations() -> Outcome {
    let spec = SynthSpec {
        n_entities: 30,
        n_relations: 4,
        n_triples: 40,
        languages: vec!["de".into()],
        pattern: Pattern::Random,
        seed: 5,
    };
    let g = synth_generate(&spec).unwrap().graphs.remove(0);
    let vocab = build_vocab(std::slice::from_ref(&g), TokenizerMode::Char).unwrap();
    let ex = prepare_examples(&g, &(0..g.triples().len()).collect::<Vec<_>>(), &vocab, 35).unwrap();
    let mut c = ModelConfig::new(vocab.len());
    c.d_model = 16;
    c.d_ff = 32;
    let cfg = TrainConfig {
        batch_size: 8,
        seed: 3,
        weights: LossWeights {
            alpha: 0.0,
            beta: 0.0,
            ..Default::default()
        },
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(Model::new(c, 1).unwrap(), cfg, vocab.hash()).unwrap();
    let mut steps = 0;
    let mut bad = 0;
    for _ in 0..5 {
        t.run_epoch(&ex, &mut |r| {
            steps += 1;
            if r.total.to_bits() != r.l_g.to_bits() {
                bad += 1;
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    }
    ensure(bad == 0, format!("{bad} of {steps} steps with total != l_g"))?;

    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    kcgc(&["gen-data", "--out", &p(&data), "--entities", "30", "--triples", "40", "--languages", "1"])?;
    let run = |name: &str, extra: &[&str]| -> Result<Vec<(String, String)>, String> {
        let out = tmp.path().join(name);
        let mut args = vec![
            "train".to_string(),
            "--set".into(),
            format!("data_dir={}", p(&data)),
            "--set".into(),
            format!("out_dir={}", p(&out)),
            "--set".into(),
            "epochs=0".into(),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        kcgc(&args.iter().map(String::as_str).collect::<Vec<_>>())?;
        Ok(resolved(&out)
            .into_iter()
            .filter(|(k, _)| k != "out_dir")
            .collect())
    };
    let base = run("base", &[])?;
    let mut rows = Vec::new();
    for (flag, key, want) in [("local", "beta", "0.0"), ("global", "alpha", "0.0"), ("mask", "mask_mode", "no_mask")] {
        let r = run(flag, &["--ablate", flag])?;
        let diff: Vec<_> = r.iter().zip(&base).filter(|(a, b)| a != b).map(|(a, _)| a.clone()).collect();
        ensure(
            diff == vec![(key.to_string(), want.to_string())],
            format!("--ablate {flag} resolved to {diff:?}"),
        )?;
        rows.push(format!("{flag}:{key}={want}"));
    }
    run("rotate", &["--score", "rotate"])?;
    let h = read_header(&tmp.path().join("rotate/model.ckpt")).map_err(|e| e.to_string())?;
    let rec = h.extra["train"]["weights"]["score_variant"].as_str().unwrap_or("").to_string();
    ensure(rec == "rotate", format!("checkpoint records score `{rec}`"))?;
    Ok(format!("total == l_g bitwise on {steps} steps; ablations {}; score recorded", rows.join(", ")))
}

// ---------------------------------------------------------------- 6

fn c6_mutual_information() -> Outcome {
    let d = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let vec = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let mut queries = Vec::new();
    let mut tails_corr = Vec::new();
    let mut tails_ind = Vec::new();
    for _ in 0..100 {
        let q: Vec<Vec<f64>> = (0..3).map(|_| vec(&mut rng)).collect();
        let mean: Vec<f64> = (0..d).map(|c| q.iter().map(|x| x[c]).sum::<f64>() / 3.0).collect();
        tails_corr.push(mean.iter().map(|m| 2.0 * m + rng.random_range(-0.1..0.1)).collect::<Vec<f64>>());
        tails_ind.push(vec(&mut rng));
        queries.push(q);
    }
    let perm = derangement(100, 6);
    let est = |tails: &[Vec<f64>]| -> f64 {
        let t = |i: usize, j: usize| {
            let refs: Vec<&[f64]> = queries[i].iter().map(Vec::as_slice).collect();
            discriminator(&refs, &tails[j]).unwrap()
        };
        let pos: Vec<f64> = (0..100).map(|i| t(i, i)).collect();
        let neg: Vec<f64> = (0..100).map(|i| t(i, perm[i])).collect();
        jsd_mi_estimate(&pos, &neg, JsdForm::Standard).unwrap()
    };
    let (corr, ind) = (est(&tails_corr), est(&tails_ind));
    let zero = jsd_mi_estimate(&[0.0; 100], &[0.0; 100], JsdForm::Standard).unwrap();
    let detail = format!(
        "correlated {corr:.4} vs independent {ind:.4} (gap {:.4} >= 0.1); T=0 gives {zero:.12}",
        corr - ind
    );
    ensure(corr - ind >= 0.1, detail.clone())?;
    ensure((zero + 2.0 * std::f64::consts::LN_2).abs() <= 1e-9, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 7

fn c7_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut lists = Vec::new();
    let mut golds = Vec::new();
    for _ in 0..1000 {
        let mut pool: Vec<u32> = (0..25).collect();
        pool.shuffle(&mut rng);
        lists.push(pool[..rng.random_range(0..=12)].to_vec());
        golds.push(rng.random_range(0..25u32));
    }
    for k in [1, 3, 10] {
        let naive = lists
            .iter()
            .zip(&golds)
            .filter(|(l, g)| l.iter().take(k).any(|x| x == *g))
            .count() as f64
            / 1000.0;
        let h = hits_at_k(&lists, &golds, k).unwrap();
        ensure(h == naive, format!("hits@{k}: {h} vs recount {naive}"))?;
    }
    for (l, g) in lists.iter().zip(&golds) {
        let one = std::slice::from_ref(l);
        let hs: Vec<f64> = (1..=12).map(|k| hits_at_k(one, &[*g], k).unwrap()).collect();
        ensure(hs.windows(2).all(|w| w[0] <= w[1]), "hits@k decreased in k")?;
    }
    let de = te_ratio_from_counts(27014 + 264 + 342, 39842).unwrap();
    let hu = te_ratio_from_counts(24193 + 614 + 731, 27765).unwrap();
    ensure(format!("{de:.2}") == "0.69" && format!("{hu:.2}") == "0.92", format!("te ratios {de} {hu}"))?;
    Ok(format!("1000 lists match recount; monotone in k; te_ratio DE {de:.2}, HU {hu:.2}"))
}

// ---------------------------------------------------------------- 8

fn macro_hits(dir: &Path) -> EvalReport {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn c8_directional() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    kcgc(&[
        "gen-data", "--out", &p(&data), "--entities", "200", "--relations", "12", "--triples", "500", "--languages", "3",
        "--pattern", "compositional", "--seed", "1",
    ])?;
    let common = ["epochs=40", "batch_size=32", "lr=0.001", "d_model=32", "d_ff=128"];
    let mut full = Vec::new();
    let mut gen = Vec::new();
    for seed in 1..=3u64 {
        for (name, extra) in [("full", &[][..]), ("gen", &["alpha=0", "beta=0"][..])] {
            let out = tmp.path().join(format!("{name}{seed}"));
            let mut sets = vec![format!("data_dir={}", p(&data)), format!("out_dir={}", p(&out)), format!("seed={seed}")];
            sets.extend(common.iter().chain(extra).map(|s| s.to_string()));
            let mut args = vec!["train".to_string()];
            for s in &sets {
                args.push("--set".into());
                args.push(s.clone());
            }
            kcgc(&args.iter().map(String::as_str).collect::<Vec<_>>())?;
            args[0] = "eval".into();
            kcgc(&args.iter().map(String::as_str).collect::<Vec<_>>())?;
            let h10 = macro_hits(&out.join("eval-test-kgc")).macro_avg.hits10;
            if name == "full" {
                full.push(h10);
            } else {
                gen.push(h10);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mf, mg) = (mean(&full), mean(&gen));
    let detail = format!(
        "test Hits@10 per seed: full {full:?} (mean {mf:.2}) vs generation-only {gen:?} (mean {mg:.2})"
    );
    ensure(
        mf >= mg,
        format!("{detail}; full loss did not match generation-only at this scale (directional gate missed)"),
    )?;
    Ok(detail)
}

// ---------------------------------------------------------------- 9

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn c9_reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let data2 = tmp.path().join("data2");
    let run = tmp.path().join("run");
    let gen = |out: &Path| {
        kcgc(&[
            "gen-data", "--out", &p(out), "--entities", "40", "--triples", "60", "--languages", "2", "--align", "--seed", "9",
        ])
    };
    gen(&data)?;
    gen(&data2)?;
    for f in files_under(&data) {
        ensure(std::fs::read(data.join(&f)).unwrap() == std::fs::read(data2.join(&f)).unwrap(), format!("gen-data {f:?} differs"))?;
    }
    let sets = [
        format!("data_dir={}", p(&data)),
        format!("out_dir={}", p(&run)),
        "epochs=3".into(),
        "batch_size=8".into(),
        "d_model=16".into(),
        "d_ff=32".into(),
        "seed=4".into(),
        "eval_every=1".into(),
    ];
    let mut args = vec!["train".to_string()];
    for s in &sets {
        args.push("--set".into());
        args.push(s.clone());
    }
    kcgc(&args.iter().map(String::as_str).collect::<Vec<_>>())?;
    let ev = run.join("eval-test-kgc");
    kcgc(&["eval", "--set", &format!("data_dir={}", p(&data)), "--set", &format!("out_dir={}", p(&run))])?;

    let saved = tmp.path().join("saved");
    std::fs::rename(&run, &saved).unwrap();
    kcgc(&["train", "--config", &p(&saved.join("config.resolved"))])?;
    kcgc(&["eval", "--config", &p(&saved.join("eval-test-kgc/config.resolved"))])?;
    ensure(ev.join("report.json").exists(), "re-run wrote no report")?;
    let a = files_under(&saved);
    let b = files_under(&run);
    ensure(a == b, format!("file sets differ: {a:?} vs {b:?}"))?;
    for f in &a {
        ensure(std::fs::read(saved.join(f)).unwrap() == std::fs::read(run.join(f)).unwrap(), format!("{f:?} differs"))?;
    }
    Ok(format!("{} files byte-identical after re-running from resolved configs", a.len()))
}

fn main() {
    type Criterion = (u32, &'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        (1, "gradient fidelity", c1_gradients),
        (2, "mask semantics", c2_masks),
        (3, "decoder soundness and oracle equivalence", c3_decoder),
        (4, "memorization", c4_memorization),
        (5, "ablation identities", c5_ablations),
        (6, "MI estimator discrimination", c6_mutual_information),
        (7, "metric correctness", c7_metrics),
        (8, "desk-scale directional experiment", c8_directional),
        (9, "reproducibility", c9_reproducibility),
    ];
    let only: Option<u32> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t0 = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match r {
            Ok(d) => println!("PASS [{n}] {name}: {d} ({secs:.1}s)"),
            Err(d) => {
                failed += 1;
                println!("FAIL [{n}] {name}: {d} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
