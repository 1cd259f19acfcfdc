//! Metrics against recount oracles, report determinism and query selection.

use kcgc_core::evaluation::{evaluate, hits_at_k, length_report, EvalConfig, EvalMode};
use kcgc_core::kgdata::{
    build_vocab, language_tags, te_ratio_from_counts, write_synthetic, Pattern, SplitRatios, SynthSpec,
};
use kcgc_core::kgdata::Part;
use kcgc_core::model::{Model, ModelConfig};
use kcgc_core::vocab::TokenizerMode;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn naive_hits(lists: &[Vec<u32>], golds: &[u32], k: usize) -> f64 {
    let mut hits = 0usize;
    for (list, gold) in lists.iter().zip(golds) {
        let mut found = false;
        for (i, x) in list.iter().enumerate() {
            if i < k && x == gold {
                found = true;
            }
        }
        if found {
            hits += 1;
        }
    }
    hits as f64 / lists.len() as f64
}

#[test]
fn hits_match_recount_on_random_lists() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut lists = Vec::new();
    let mut golds = Vec::new();
    for _ in 0..1000 {
        let mut pool: Vec<u32> = (0..30).collect();
        pool.shuffle(&mut rng);
        let n = rng.random_range(0..=15);
        lists.push(pool[..n].to_vec());
        golds.push(rng.random_range(0..30));
    }
    let mut prev_all = 0.0;
    for k in 1..=20 {
        let h = hits_at_k(&lists, &golds, k).unwrap();
        assert_eq!(h, naive_hits(&lists, &golds, k), "k = {k}");
        assert!(h >= prev_all);
        prev_all = h;
    }
    for (l, g) in lists.iter().zip(&golds) {
        let one = std::slice::from_ref(l);
        let per_k: Vec<f64> = (1..=16).map(|k| hits_at_k(one, &[*g], k).unwrap()).collect();
        assert!(per_k.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn bucket_counts_sum_to_queries() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ranks: Vec<Option<usize>> = (0..500).map(|_| rng.random_bool(0.6).then(|| rng.random_range(1..=10))).collect();
    let lens: Vec<usize> = (0..500).map(|_| rng.random_range(1..=12)).collect();
    let b = length_report(&ranks, &lens, 40).unwrap();
    assert_eq!(b.iter().map(|x| x.count).sum::<usize>(), 500);
    for bucket in &b {
        let n = lens.iter().filter(|&&l| l == bucket.length).count();
        assert_eq!(bucket.count, n);
        assert_eq!(bucket.excluded, n < 40);
    }
}

#[test]
fn density_ratio_from_table_counts() {
    let de = te_ratio_from_counts(27014 + 264 + 342, 39842).unwrap();
    let hu = te_ratio_from_counts(24193 + 614 + 731, 27765).unwrap();
    assert_eq!(format!("{de:.2}"), "0.69");
    assert_eq!(format!("{hu:.2}"), "0.92");
}

#[test]
fn reports_are_deterministic_and_macro_averaged() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_entities: 50,
        n_relations: 5,
        n_triples: 80,
        languages: language_tags(2),
        pattern: Pattern::Random,
        seed: 4,
    };
    let d = write_synthetic(dir.path(), &spec, SplitRatios::default(), 4, true).unwrap();
    let vocab = build_vocab(std::slice::from_ref(&d.graph), TokenizerMode::Char).unwrap();
    let mut c = ModelConfig::new(vocab.len());
    c.d_model = 16;
    c.d_ff = 32;
    let model = Model::new(c, 3).unwrap();
    let cfg = EvalConfig::default();
    let (r1, q1) = evaluate(&model, &vocab, &d.graph, &d.split, Part::Test, &cfg, "ck").unwrap();
    let (r2, q2) = evaluate(&model, &vocab, &d.graph, &d.split, Part::Test, &cfg, "ck").unwrap();
    assert_eq!(r1.to_json(), r2.to_json());
    assert_eq!(q1, q2);

    assert_eq!(r1.per_language.len(), 2);
    let mean1 = r1.per_language.iter().map(|l| l.hits.hits1).sum::<f64>() / 2.0;
    let mean10 = r1.per_language.iter().map(|l| l.hits.hits10).sum::<f64>() / 2.0;
    assert!((r1.macro_avg.hits1 - mean1).abs() < 0.006);
    assert!((r1.macro_avg.hits10 - mean10).abs() < 0.006);
    assert!(q1.iter().all(|q| q.top.len() <= 10));
    assert!(q1.iter().all(|q| !d.graph.relation_id(&q.relation, &q.lang).is_some_and(|r| d.graph.is_alignment(r))));

    let mut acfg = cfg.clone();
    acfg.mode = EvalMode::Alignment;
    let (ra, qa) = evaluate(&model, &vocab, &d.graph, &d.split, Part::Test, &acfg, "ck").unwrap();
    let expected = d.split.triples(&d.graph, Part::Test).filter(|t| d.graph.is_alignment(t.relation)).count();
    assert_eq!(ra.queries, expected);
    assert!(qa.iter().all(|q| q.relation.starts_with("same_as_")));
}
