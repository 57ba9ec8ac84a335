//! Property tests for the structural invariants.

mod common;

use proptest::prelude::*;

use nestccg::categories::{matches, parse_category, Category};
use nestccg::chunk_graph::{build_adjacency, merge_chunks, EdgeTypes, GraphMode};
use nestccg::corpus::Sentence;
use nestccg::lexicon::{build_lexicon, count_ngrams, segment};
use nestccg::tensor::masked_softmax;

fn arb_category() -> impl Strategy<Value = Category> {
    let atom = prop_oneof![
        prop_oneof![Just("S"), Just("NP"), Just("N"), Just("PP"), Just("conj"), Just(",")]
            .prop_map(Category::atom),
        (
            prop_oneof![Just("S"), Just("NP"), Just("N")],
            prop_oneof![Just("dcl"), Just("b"), Just("nb"), Just("adj")],
        )
            .prop_map(|(b, f)| Category::atom_with_feature(b, f)),
    ];
    atom.prop_recursive(4, 64, 2, |inner| {
        (inner.clone(), any::<bool>(), inner).prop_map(|(r, fwd, a)| {
            if fwd {
                Category::forward(r, a)
            } else {
                Category::backward(r, a)
            }
        })
    })
}

fn arb_sentence() -> impl Strategy<Value = Sentence> {
    prop::collection::vec(0usize..5, 1..10).prop_map(|ids| {
        Sentence::new(ids.into_iter().map(|i| format!("w{i}")).collect()).unwrap()
    })
}

fn arb_corpus() -> impl Strategy<Value = Vec<Sentence>> {
    prop::collection::vec(arb_sentence(), 1..12)
}

proptest! {
    #[test]
    fn category_parse_print_roundtrip(cat in arb_category()) {
        let s = cat.to_string();
        let back = parse_category(&s).unwrap();
        prop_assert_eq!(&back, &cat);
        prop_assert_eq!(back.to_string(), s);
    }

    #[test]
    fn matches_is_reflexive(cat in arb_category()) {
        prop_assert!(matches(&cat, &cat));
    }

    #[test]
    fn segmentation_partitions_the_sentence(
        corpus in arb_corpus(),
        threshold in -3.0f64..3.0,
    ) {
        let table = count_ngrams(&corpus, 2).unwrap();
        for sentence in &corpus {
            let segs = segment(sentence, &table, threshold).unwrap();
            let flat: Vec<String> = segs.concat();
            prop_assert_eq!(&flat[..], sentence.tokens());
            prop_assert!(segs.iter().all(|s| !s.is_empty()));
        }
    }

    #[test]
    fn delimiter_set_grows_with_threshold(
        corpus in arb_corpus(),
        t1 in -2.0f64..2.0,
        delta in 0.0f64..2.0,
    ) {
        let t2 = t1 + delta;
        let table = count_ngrams(&corpus, 2).unwrap();
        for sentence in &corpus {
            let low = segment(sentence, &table, t1).unwrap();
            let high = segment(sentence, &table, t2).unwrap();
            // boundary positions at the lower threshold are a subset of
            // those at the higher one
            let bounds = |segs: &[Vec<String>]| {
                let mut cuts = Vec::new();
                let mut pos = 0;
                for s in &segs[..segs.len() - 1] {
                    pos += s.len();
                    cuts.push(pos);
                }
                cuts
            };
            let lb = bounds(&low);
            let hb = bounds(&high);
            prop_assert!(lb.iter().all(|b| hb.contains(b)), "{:?} not within {:?}", lb, hb);
        }
    }

    #[test]
    fn lexicon_respects_length_bound(
        corpus in arb_corpus(),
        max_len in 1usize..6,
        threshold in -2.0f64..2.0,
    ) {
        let lex = build_lexicon(&corpus, max_len, threshold).unwrap();
        prop_assert!(lex.iter().all(|n| (1..=max_len).contains(&n.len())));
    }

    #[test]
    fn merge_is_order_invariant_and_partitions(
        raw_spans in prop::collection::vec((0usize..10, 0usize..4), 0..8),
        extra in 1usize..11,
    ) {
        let n = 10usize.max(extra);
        let spans: Vec<(usize, usize)> = raw_spans
            .iter()
            .map(|&(s, len)| (s.min(n - 1), (s + len).min(n - 1)))
            .collect();
        let forward = merge_chunks(&spans, n);
        let mut reversed = spans.clone();
        reversed.reverse();
        prop_assert_eq!(&forward, &merge_chunks(&reversed, n));

        let mut next = 0;
        for &(s, e) in forward.chunks() {
            prop_assert_eq!(s, next);
            prop_assert!(e >= s && e < n);
            next = e + 1;
        }
        prop_assert_eq!(next, n);
    }

    #[test]
    fn adjacency_is_symmetric_with_unit_diagonal(
        raw_spans in prop::collection::vec((0usize..8, 0usize..3), 0..6),
        mode_pick in 0usize..3,
        in_chunk in any::<bool>(),
        cross_chunk in any::<bool>(),
    ) {
        let n = 8;
        let spans: Vec<(usize, usize)> = raw_spans
            .iter()
            .map(|&(s, len)| (s.min(n - 1), (s + len).min(n - 1)))
            .collect();
        let partition = merge_chunks(&spans, n);
        let mode = [GraphMode::Chunk, GraphMode::Full, GraphMode::None][mode_pick];
        let adj = build_adjacency(&partition, n, mode, EdgeTypes { in_chunk, cross_chunk });
        prop_assert!(adj.is_symmetric());
        prop_assert!(adj.has_unit_diagonal());
    }

    #[test]
    fn masked_softmax_is_a_distribution(
        logits in prop::collection::vec(-30.0f64..30.0, 1..12),
        mask_bits in prop::collection::vec(any::<bool>(), 1..12),
    ) {
        let n = logits.len().min(mask_bits.len());
        let logits = &logits[..n];
        let mut mask: Vec<f64> = mask_bits[..n].iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        if mask.iter().all(|&m| m == 0.0) {
            mask[0] = 1.0;
        }
        let out = masked_softmax(logits, &mask).unwrap();
        let sum: f64 = out.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        for (o, m) in out.iter().zip(&mask) {
            if *m == 0.0 {
                prop_assert_eq!(*o, 0.0);
            } else {
                prop_assert!(*o >= 0.0);
            }
        }
    }
}
