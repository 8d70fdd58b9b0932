mod common;

use std::collections::BTreeMap;

use common::random_tree;
use deptree_lm::corpus::{parse_kbest, split_validation, Split, Vocab, ROOT_ID, UNK_ID};
use deptree_lm::deptree::{write_conll, ConllPolicy, DepTree, Token};
use deptree_lm::tasks::eval_attachment;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Trees over a Zipf-like vocabulary of mixed-case forms.
fn zipf_corpus(n: usize, seed: u64) -> Vec<DepTree> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..12);
            let shape = random_tree(len, &mut rng);
            let tokens = shape
                .tokens()
                .iter()
                .map(|t| {
                    let rank = (1.0 / rng.gen_range(0.002f64..1.0)) as usize;
                    let form = if rng.gen_bool(0.2) { format!("W{rank}") } else { format!("w{rank}") };
                    Token::new(t.index, form, t.head)
                })
                .collect();
            DepTree::new(tokens).unwrap()
        })
        .collect()
}

#[test]
fn vocabulary_files_are_deterministic() {
    let trees = zipf_corpus(300, 1);
    let a = Vocab::build(&trees, 2, true).unwrap().to_text();
    let b = Vocab::build(&trees, 2, true).unwrap().to_text();
    assert_eq!(a, b);
    assert!(a.starts_with("TLMVOCAB1\t"));
}

#[test]
fn unk_rate_matches_an_independent_count() {
    let trees = zipf_corpus(1000, 2);
    let min_count = 5;
    let mut freq: BTreeMap<String, u64> = BTreeMap::new();
    for t in &trees {
        for tok in t.tokens() {
            *freq.entry(tok.form.to_lowercase()).or_default() += 1;
        }
    }
    let total: u64 = freq.values().sum();
    let rare: u64 = freq.values().filter(|&&c| c <= min_count).sum();
    let vocab = Vocab::build(&trees, min_count, true).unwrap();
    let enc = vocab.encode_all(&trees, Split::Train);
    assert_eq!(enc.token_count() as u64, total);
    assert!(rare > 0);
    assert!((enc.unk_rate() - rare as f64 / total as f64).abs() < 1e-15);
    assert_eq!(vocab.len(), 2 + freq.values().filter(|&&c| c > min_count).count());
}

#[test]
fn encoded_ids_are_in_range_and_round_trip() {
    let trees = zipf_corpus(200, 3);
    let vocab = Vocab::build(&trees, 1, false).unwrap();
    for t in &trees {
        let e = vocab.encode(t);
        assert_eq!(e.ids[0], ROOT_ID);
        for (i, &id) in e.ids.iter().enumerate().skip(1) {
            assert!((id as usize) < vocab.len());
            if id != UNK_ID {
                assert_eq!(vocab.word(id), t.form(i));
            }
        }
    }
    for id in 2..vocab.len() as u32 {
        assert_eq!(vocab.id(vocab.word(id)), id);
    }
}

#[test]
fn top_candidate_equal_to_gold_scores_full_attachment() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gold = random_tree(9, &mut rng);
    let other = random_tree(9, &mut rng);
    let gold_text = write_conll(&gold, &["sid=s".into()]);
    let kbest_text = write_conll(&gold, &["sid=s".into(), "rank=1".into()])
        + &write_conll(&other, &["sid=s".into(), "rank=2".into()]);
    let groups = parse_kbest(&gold_text, &kbest_text, 5, ConllPolicy::default()).unwrap();
    let g = &groups[0];
    let score = eval_attachment(&[(&g.candidates[0].tree, &g.gold)]).unwrap();
    assert_eq!(score.uas, 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raising_min_count_never_grows_the_vocabulary(seed in any::<u64>(), a in 0u64..8, b in 0u64..8) {
        let trees = zipf_corpus(60, seed);
        let (lo, hi) = (a.min(b), a.max(b));
        let small = Vocab::build(&trees, hi, true).unwrap();
        let large = Vocab::build(&trees, lo, true).unwrap();
        prop_assert!(small.len() <= large.len());
    }

    #[test]
    fn validation_split_partitions_the_corpus(seed in any::<u64>(), n in 1usize..200, frac in 0.0f64..1.0) {
        let size = (n as f64 * frac) as usize;
        let (train, valid) = split_validation((0..n).collect::<Vec<_>>(), size, seed).unwrap();
        prop_assert_eq!(valid.len(), size);
        let mut all: Vec<usize> = train.iter().chain(&valid).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(train.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(valid.windows(2).all(|w| w[0] < w[1]));
    }
}
