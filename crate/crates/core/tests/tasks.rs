mod common;

use common::{figure_tree, random_tree, FIGURE_FORMS, FIGURE_HEADS};
use deptree_lm::corpus::{CompletionQuestion, KBestCandidate, KBestGroup, Vocab, ROOT_ID, UNK_ID};
use deptree_lm::deptree::{DepTree, EdgeType, Token};
use deptree_lm::tasks::{
    argmax_first, classifier_rows, complete, eval_attachment, eval_completion, eval_rerank, generate, generate_many,
    rerank, rerank_table, train_classifiers, ClassifierBundle, ClassifierTrainConfig, GenLimits, TreeModel,
};
use deptree_lm::treelm::{log_prob_tree, ModelParams, TreeLmConfig, Variant};
use deptree_lm::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vocab() -> Vocab {
    let mut words: Vec<&str> = FIGURE_FORMS.to_vec();
    words.sort();
    words.dedup();
    Vocab::from_words(&words)
}

fn model(variant: Variant, d: usize, seed: u64) -> TreeModel {
    let v = vocab();
    let mut cfg = TreeLmConfig::new(variant, v.len(), d, 2);
    cfg.init_range = 0.5;
    let p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    TreeModel::new(cfg, p, v).unwrap()
}

/// Random projective trees over the figure's forms.
fn candidates(n: usize, seed: u64) -> Vec<DepTree> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(3..9);
            let shape = random_tree(len, &mut rng);
            let forms: Vec<&str> = (0..len).map(|_| FIGURE_FORMS[rng.gen_range(0..FIGURE_FORMS.len())]).collect();
            DepTree::from_heads(&forms, &shape.heads()).unwrap()
        })
        .collect()
}

fn labelled(heads: &[usize], labels: &[&str], pos: &[&str]) -> DepTree {
    let tokens = heads
        .iter()
        .enumerate()
        .map(|(i, &h)| Token::new(i + 1, format!("w{i}"), h).with_label(labels[i]).with_pos(pos[i]))
        .collect();
    DepTree::new(tokens).unwrap()
}

#[test]
fn tree_model_rejects_mismatched_vocabulary() {
    let m = model(Variant::TreeLstm, 4, 1);
    let small = Vocab::from_words(&["a"]);
    assert!(TreeModel::new(m.config.clone(), m.params.clone(), small).is_err());
}

#[test]
fn completion_matches_brute_force_argmax() {
    let m = model(Variant::LdTreeLstm, 6, 2);
    let pool = candidates(40, 3);
    let questions: Vec<CompletionQuestion> = pool
        .chunks(5)
        .enumerate()
        .map(|(i, c)| {
            let scores: Vec<f64> = c.iter().map(|t| m.score(t).unwrap()).collect();
            CompletionQuestion {
                id: format!("q{i}"),
                candidates: c.to_vec(),
                gold: argmax_first(&scores),
            }
        })
        .collect();
    let summary = eval_completion(&m, &questions).unwrap();
    assert_eq!(summary.accuracy, 1.0);

    // Gold never on the model's choice.
    let adversarial: Vec<CompletionQuestion> = questions
        .iter()
        .map(|q| CompletionQuestion {
            gold: (q.gold + 1) % 5,
            ..q.clone()
        })
        .collect();
    assert_eq!(eval_completion(&m, &adversarial).unwrap().accuracy, 0.0);

    let line = summary.results[0].tsv_line();
    let cols: Vec<&str> = line.split('\t').collect();
    assert_eq!(cols.len(), 4);
    assert_eq!(cols[0], "q0");
    assert_eq!(cols[3].split(',').count(), 5);
    let parsed: Vec<f64> = cols[3].split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(parsed, summary.results[0].scores);
}

#[test]
fn identical_candidates_pick_the_first() {
    let m = model(Variant::TreeLstm, 4, 4);
    let q = CompletionQuestion {
        id: "same".into(),
        candidates: vec![figure_tree(); 5],
        gold: 3,
    };
    let r = complete(&m, &q).unwrap();
    assert_eq!(r.chosen, 0);
    assert!(!r.correct());
}

fn group(id: &str, gold: &DepTree, trees: Vec<DepTree>) -> KBestGroup {
    KBestGroup {
        id: id.into(),
        gold: gold.clone(),
        candidates: trees
            .into_iter()
            .enumerate()
            .map(|(i, tree)| KBestCandidate {
                rank: i as u32 + 1,
                tree,
                parser_score: Some(-(i as f64)),
            })
            .collect(),
    }
}

/// The figure's forms under several projective head assignments.
fn figure_variants(n: usize, seed: u64) -> Vec<DepTree> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| DepTree::from_heads(&FIGURE_FORMS, &random_tree(FIGURE_FORMS.len(), &mut rng).heads()).unwrap())
        .collect()
}

#[test]
fn rerank_picks_highest_model_score() {
    let m = model(Variant::LdTreeLstm, 6, 5);
    let gold = figure_tree();
    let trees = figure_variants(4, 6);
    let scores: Vec<f64> = trees.iter().map(|t| m.score(t).unwrap()).collect();
    let g = group("s1", &gold, trees.clone());
    let r = rerank(&m, &g, None).unwrap();
    assert_eq!(r.chosen, argmax_first(&scores));
    assert_eq!(r.model_scores, scores);

    let single = group("s2", &gold, trees[..1].to_vec());
    assert_eq!(rerank(&m, &single, None).unwrap().chosen, 0);

    // A huge parser weight defers to the parser's ranking.
    assert_eq!(rerank(&m, &g, Some(1e6)).unwrap().chosen, 0);
    let mut missing = g.clone();
    missing.candidates[2].parser_score = None;
    assert!(matches!(rerank(&m, &missing, Some(0.5)), Err(Error::Data(_))));
}

#[test]
fn rerank_summary_and_table() {
    let m = model(Variant::TreeLstm, 4, 7);
    let gold = figure_tree();
    let mut trees = figure_variants(3, 8);
    trees.insert(1, gold.clone());
    let groups = vec![group("a", &gold, trees.clone()), group("b", &gold, vec![gold.clone()])];
    let summary = eval_rerank(&m, &groups, None).unwrap();
    assert_eq!(summary.results.len(), 2);
    assert!(summary.score.las <= summary.score.uas);
    let table = rerank_table(&groups, &summary.results);
    assert_eq!(table.lines().count(), 1 + 4 + 1);
    let chosen: Vec<&str> = table.lines().skip(1).filter(|l| l.ends_with("\t1")).collect();
    assert_eq!(chosen.len(), 2);
}

#[test]
fn attachment_hand_count() {
    let gold = labelled(&[2, 0, 2, 5, 3], &["a", "root", "b", "c", "d"], &["NN"; 5]);
    // Heads right at 1, 2, 3; labels right at 1 and 2 among them.
    let pred = labelled(&[2, 0, 2, 2, 4], &["a", "root", "x", "c", "d"], &["NN"; 5]);
    let s = eval_attachment(&[(&pred, &gold)]).unwrap();
    assert_eq!((s.tokens, s.correct_heads, s.correct_labeled), (5, 3, 2));
    assert!((s.uas - 0.6).abs() < 1e-15 && (s.las - 0.4).abs() < 1e-15);

    let perfect = eval_attachment(&[(&gold, &gold)]).unwrap();
    assert_eq!((perfect.uas, perfect.las), (1.0, 1.0));

    let wrong = labelled(&[4, 4, 4, 0, 4], &["a"; 5], &["NN"; 5]);
    let g2 = labelled(&[2, 0, 2, 3, 3], &["a"; 5], &["NN"; 5]);
    let s = eval_attachment(&[(&wrong, &g2)]).unwrap();
    assert_eq!((s.uas, s.las), (0.0, 0.0));
}

#[test]
fn attachment_skips_gold_punctuation() {
    let gold = labelled(&[2, 0, 2, 2], &["a", "root", "p", "p"], &["NN", "VB", ",", "."]);
    let pred = labelled(&[2, 0, 1, 1], &["a", "root", "p", "p"], &["NN", "VB", "NN", "NN"]);
    let s = eval_attachment(&[(&pred, &gold)]).unwrap();
    assert_eq!(s.tokens, 2);
    assert_eq!(s.uas, 1.0);
    let short = labelled(&[0], &["root"], &["NN"]);
    assert!(eval_attachment(&[(&short, &gold)]).is_err());
}

#[test]
fn attachment_ignores_token_bookkeeping_order() {
    let gold = labelled(&[2, 0, 2, 5, 3], &["a", "root", "b", "c", "d"], &["NN"; 5]);
    let pred = labelled(&[2, 0, 2, 2, 4], &["a", "root", "x", "c", "d"], &["NN"; 5]);
    let fwd = eval_attachment(&[(&pred, &gold), (&gold, &gold)]).unwrap();
    let rev = eval_attachment(&[(&gold, &gold), (&pred, &gold)]).unwrap();
    assert_eq!(fwd, rev);
}

#[test]
fn classifier_labels_are_read_off_the_tree() {
    let m = model(Variant::LdTreeLstm, 4, 9);
    let enc = m.vocab.encode(&figure_tree());
    let rows = classifier_rows(&m.params, &m.config, std::slice::from_ref(&enc)).unwrap();
    let n = FIGURE_FORMS.len();
    assert_eq!(rows[EdgeType::Left.index()].len(), n);
    assert_eq!(rows[EdgeType::Right.index()].len(), n);
    // Left dependents: 1, 2, 3, 4, 5, 6, 8, 11; right dependents of
    // non-ROOT heads: 9, 10, 12.
    assert_eq!(rows[EdgeType::NxLeft.index()].len(), 8);
    assert_eq!(rows[EdgeType::NxRight.index()].len(), 3);
    // Token 1 ("The") is a leaf.
    assert!(!rows[EdgeType::Left.index()][0].label);
    assert!(!rows[EdgeType::Right.index()][0].label);
    // Token 7 ("sold") has both sides.
    assert!(rows[EdgeType::Left.index()][6].label && rows[EdgeType::Right.index()][6].label);
    let left_sources: Vec<usize> = (1..=n).filter(|&v| v < FIGURE_HEADS[v - 1]).collect();
    let nx_left: Vec<bool> = rows[EdgeType::NxLeft.index()].iter().map(|r| r.label).collect();
    // Farthest left dependents (1 under 4, 4 under 7, 5 under 6, 8 under 9,
    // 11 under 12) end their chains.
    let want: Vec<bool> = left_sources.iter().map(|v| ![1, 4, 5, 8, 11].contains(v)).collect();
    assert_eq!(nx_left, want);
    let d = m.config.hidden;
    assert_eq!(rows[0][0].features.len(), 2 * d);
    assert_eq!(&rows[0][0].features[d..], m.params.out.row(enc.ids[1] as usize));
}

#[test]
fn always_false_classifiers_yield_one_node() {
    let m = model(Variant::LdTreeLstm, 6, 10);
    let none = ClassifierBundle::constant(6, false);
    let g = generate(&m, &none, &GenLimits::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(g.tree.len(), 1);
    assert_eq!(g.tree.head(1), 0);
    assert!(!g.truncated);
}

#[test]
fn always_true_classifiers_hit_the_limits() {
    let m = model(Variant::LdTreeLstm, 6, 11);
    let all = ClassifierBundle::constant(6, true);
    let limits = GenLimits {
        max_nodes: 25,
        max_depth: 3,
        max_arity: 2,
        ..GenLimits::default()
    };
    let g = generate(&m, &all, &limits, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert!(g.truncated);
    assert!(g.tree.len() <= 25);
    assert!(g.tree.depths().iter().all(|&d| d <= 3));
    for v in 1..=g.tree.len() {
        assert!(g.tree.left_deps(v).len() <= 2 && g.tree.right_deps(v).len() <= 2);
    }
    // Depth 3 with two dependents per side: 1 + 4 + 16 nodes.
    assert_eq!(g.tree.len(), 21);
}

fn random_bundle(d: usize, seed: u64) -> ClassifierBundle {
    let mut b = ClassifierBundle::init(d, 16, &mut ChaCha8Rng::seed_from_u64(seed));
    // Lean towards stopping so trees stay small.
    for c in &mut b.classifiers {
        c.b2.set(0, 0, -0.3);
    }
    b
}

#[test]
fn sampled_trees_are_valid_and_scored_consistently() {
    for variant in [Variant::TreeLstm, Variant::LdTreeLstm] {
        let m = model(variant, 6, 12);
        let bundle = random_bundle(6, 13);
        let limits = GenLimits {
            sample_decisions: true,
            ..GenLimits::default()
        };
        let trees = generate_many(&m, &bundle, &limits, 100, 14).unwrap();
        assert!(trees.iter().any(|g| g.tree.len() > 1), "{variant}: only single-node trees");
        for g in &trees {
            assert!(g.tree.is_projective());
            assert_eq!(g.tree.right_deps(0).len(), 1);
            assert!(g.ids[1..].iter().all(|&w| w != ROOT_ID));
            let exact = log_prob_tree(&m.params, &m.config, &g.encoded()).unwrap();
            assert!((exact - g.log_prob).abs() < 1e-9 * exact.abs().max(1.0), "{exact} vs {}", g.log_prob);
        }
    }
}

#[test]
fn generation_is_seeded_and_argmax_at_zero_temperature() {
    let m = model(Variant::LdTreeLstm, 6, 15);
    let bundle = random_bundle(6, 16);
    let limits = GenLimits::default();
    let a = generate_many(&m, &bundle, &limits, 5, 3).unwrap();
    let b = generate_many(&m, &bundle, &limits, 5, 3).unwrap();
    assert_eq!(a, b);
    let greedy = GenLimits {
        temperature: 0.0,
        ..GenLimits::default()
    };
    let x = generate(&m, &bundle, &greedy, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let y = generate(&m, &bundle, &greedy, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(x, y);
}

#[test]
fn unk_can_be_excluded() {
    let mut m = model(Variant::TreeLstm, 4, 17);
    // Make UNK overwhelmingly likely.
    m.params.out_bias.set(UNK_ID as usize, 0, 50.0);
    let none = ClassifierBundle::constant(4, false);
    let g = generate(&m, &none, &GenLimits::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(g.ids[1], UNK_ID);
    let limits = GenLimits {
        forbid_unk: true,
        ..GenLimits::default()
    };
    let g = generate(&m, &none, &limits, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_ne!(g.ids[1], UNK_ID);
}

#[test]
fn classifiers_beat_majority_on_held_out_nodes() {
    let m = model(Variant::LdTreeLstm, 8, 18);
    let trees: Vec<_> = candidates(120, 19).iter().map(|t| m.vocab.encode(t)).collect();
    let (train, held) = trees.split_at(90);
    let config = ClassifierTrainConfig {
        hidden: 32,
        epochs: 30,
        lr: 0.05,
        ..ClassifierTrainConfig::default()
    };
    let (bundle, report) = train_classifiers(&m.params, &m.config, train, &config).unwrap();
    let rows = classifier_rows(&m.params, &m.config, held).unwrap();
    for e in EdgeType::ALL {
        let i = e.index();
        let pos = rows[i].iter().filter(|r| r.label).count();
        let majority = pos.max(rows[i].len() - pos) as f64 / rows[i].len() as f64;
        let acc = bundle.accuracy(e, &rows[i]);
        assert!(acc >= majority, "{e:?}: {acc} vs majority {majority}; {report:?}");
    }
    assert!(bundle.check(&m.config).is_ok());
}
