//! Shared generators for integration tests.
#![allow(dead_code)]

pub mod oracle;

use deptree_lm::corpus::{EncodedTree, ROOT_ID};
use deptree_lm::deptree::DepTree;
use rand::Rng;

pub const FIGURE_FORMS: [&str; 12] = [
    "The",
    "luxury",
    "auto",
    "manufacturer",
    "last",
    "year",
    "sold",
    "1,214",
    "cars",
    "in",
    "the",
    "U.S.",
];
pub const FIGURE_HEADS: [usize; 12] = [4, 4, 4, 7, 6, 7, 0, 9, 7, 7, 12, 10];

pub fn figure_tree() -> DepTree {
    DepTree::from_heads(&FIGURE_FORMS, &FIGURE_HEADS).unwrap()
}

/// Heads of a uniformly shaped random projective tree over `n ≥ 1` tokens.
pub fn random_projective_heads<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut heads = vec![0; n + 1];
    build_span(1, n, 0, &mut heads, rng);
    heads[1..].to_vec()
}

fn build_span<R: Rng + ?Sized>(lo: usize, hi: usize, head: usize, heads: &mut [usize], rng: &mut R) {
    let r = rng.gen_range(lo..=hi);
    heads[r] = head;
    for (a, b) in random_segments(lo, r.saturating_sub(1), rng)
        .into_iter()
        .chain(random_segments(r + 1, hi, rng))
    {
        build_span(a, b, r, heads, rng);
    }
}

/// Splits `[lo, hi]` into consecutive non-empty segments.
fn random_segments<R: Rng + ?Sized>(lo: usize, hi: usize, rng: &mut R) -> Vec<(usize, usize)> {
    if lo == 0 || lo > hi {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut start = lo;
    for p in lo..hi {
        if rng.gen_bool(0.4) {
            out.push((start, p));
            start = p + 1;
        }
    }
    out.push((start, hi));
    out
}

pub fn random_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DepTree {
    let forms: Vec<String> = (1..=n).map(|i| format!("w{i}")).collect();
    DepTree::from_heads(&forms, &random_projective_heads(n, rng)).unwrap()
}

/// Random projective shape with random word ids in `2..vocab_size`.
pub fn random_encoded<R: Rng + ?Sized>(n: usize, vocab_size: usize, rng: &mut R) -> EncodedTree {
    let tree = random_tree(n, rng);
    let mut ids = vec![ROOT_ID];
    ids.extend((0..n).map(|_| rng.gen_range(2..vocab_size as u32)));
    EncodedTree::from_ids(tree, ids)
}

/// Each word is the single right dependent of the previous one.
pub fn chain(ids: &[u32]) -> EncodedTree {
    let n = ids.len();
    let forms: Vec<String> = (1..=n).map(|i| format!("w{i}")).collect();
    let heads: Vec<usize> = (0..n).collect();
    let tree = DepTree::from_heads(&forms, &heads).unwrap();
    let mut all = vec![ROOT_ID];
    all.extend_from_slice(ids);
    EncodedTree::from_ids(tree, all)
}

pub fn encode_with(tree: DepTree, ids: &[u32]) -> EncodedTree {
    let mut all = vec![ROOT_ID];
    all.extend_from_slice(ids);
    EncodedTree::from_ids(tree, all)
}
