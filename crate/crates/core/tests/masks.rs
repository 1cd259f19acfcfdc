//! Visibility-mask semantics on random serialized triples.

use kcgc_core::model::{MaskMode, Model, ModelConfig, VisibilityMask};
use kcgc_core::vocab::{SerializedTriple, TokenizerMode, Vocabulary};
use proptest::prelude::*;

const MODES: [MaskMode; 3] = [MaskMode::RoleSeparated, MaskMode::FullCausal, MaskMode::NoMask];

fn vocab() -> Vocabulary {
    Vocabulary::build(["abcdef"], TokenizerMode::Char).unwrap()
}

fn model(mode: MaskMode, seed: u64) -> Model {
    let mut c = ModelConfig::new(vocab().len());
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_model = 8;
    c.d_ff = 16;
    c.mask_mode = mode;
    Model::new(c, seed).unwrap()
}

/// Visibility written out from the rules, independent of the mask builder.
fn expected(s: &SerializedTriple, mode: MaskMode, i: usize, j: usize) -> bool {
    let q = s.query_len;
    match mode {
        MaskMode::FullCausal => j <= i,
        MaskMode::NoMask => {
            if i < q {
                j < q
            } else {
                j <= i
            }
        }
        MaskMode::RoleSeparated => {
            if i == s.pos_h {
                j == i || s.head_span.contains(&j)
            } else if i == s.pos_r {
                j == i || s.rel_span.contains(&j)
            } else if i < q {
                j < q
            } else {
                j <= i
            }
        }
    }
}

fn rows_bits(m: &Model, s: &SerializedTriple, upto: usize) -> Vec<u64> {
    let e = m.encode_triple(s).unwrap();
    (0..upto).flat_map(|i| e.row(i).iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn query_states_ignore_the_tail(
        head in "[a-f]{1,5}",
        rel in "[a-f]{1,4}",
        t1 in "[a-f]{1,6}",
        t2 in "[a-f]{1,6}",
        seed in 0u64..1000,
    ) {
        let v = vocab();
        let a = v.serialize_triple(&head, &rel, &t1, 35).unwrap();
        let b = v.serialize_triple(&head, &rel, &t2, 35).unwrap();
        for mode in MODES {
            let m = model(mode, seed);
            prop_assert_eq!(rows_bits(&m, &a, a.query_len), rows_bits(&m, &b, b.query_len));
        }
    }

    #[test]
    fn tail_rows_are_causal(
        head in "[a-f]{1,5}",
        rel in "[a-f]{1,4}",
        tail in "[a-f]{2,6}",
        at in 0usize..6,
        sub in "[a-f]",
        seed in 0u64..1000,
    ) {
        let v = vocab();
        let a = v.serialize_triple(&head, &rel, &tail, 35).unwrap();
        let at = at % tail.chars().count();
        let changed: String = tail
            .chars()
            .enumerate()
            .map(|(k, c)| if k == at { sub.chars().next().unwrap() } else { c })
            .collect();
        let b = v.serialize_triple(&head, &rel, &changed, 35).unwrap();
        let p = a.tail_span.start + at;
        for mode in MODES {
            let m = model(mode, seed);
            prop_assert_eq!(rows_bits(&m, &a, p), rows_bits(&m, &b, p));
        }
    }

    #[test]
    fn masks_follow_the_visibility_rules(
        head in "[a-f]{1,8}",
        rel in "[a-f]{1,8}",
        tail in "[a-f]{1,8}",
    ) {
        let s = vocab().serialize_triple(&head, &rel, &tail, 35).unwrap();
        for mode in MODES {
            let m = VisibilityMask::build(&s, mode);
            for i in 0..s.len() {
                for j in 0..s.len() {
                    prop_assert_eq!(m.get(i, j), expected(&s, mode, i, j), "{:?} ({}, {})", mode, i, j);
                }
            }
        }
    }
}
