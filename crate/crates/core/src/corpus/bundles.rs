//! Completion question sets and k-best rerank groups.
//!
//! Both are CoNLL files whose blocks carry `key=value` annotations on the
//! `#` comment lines in front of them:
//!
//! ```text
//! # qid=17 gold=3
//! 1   The   _ DT DT _ 2 det  _ _
//! ...
//! ```
//!
//! A completion question is five consecutive-or-not blocks sharing a `qid`;
//! candidates keep file order and `gold=` (0-based) may appear on any of
//! them. K-best blocks carry `sid=` and `rank=` (and optionally `score=`);
//! gold blocks carry `sid=` or default to their 1-based ordinal.

use std::collections::HashMap;
use std::path::Path;

use crate::deptree::{parse_conll_with, AnnotatedTree, ConllPolicy, DepTree};
use crate::error::{Error, Result};

pub const CANDIDATES_PER_QUESTION: usize = 5;

/// `key=value` pairs collected from a block's comment lines.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Annotations(HashMap<String, String>);

impl Annotations {
    pub fn parse(comments: &[String]) -> Self {
        let mut map = HashMap::new();
        for c in comments {
            for field in c.split_whitespace() {
                if let Some((k, v)) = field.split_once('=') {
                    map.insert(k.to_string(), v.to_string());
                }
            }
        }
        Annotations(map)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, block: usize) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Data(format!("block {block}: `{key}={v}` has the wrong type"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CompletionQuestion {
    pub id: String,
    pub candidates: Vec<DepTree>,
    pub gold: usize,
}

#[derive(Clone, Debug)]
pub struct KBestCandidate {
    pub rank: u32,
    pub tree: DepTree,
    /// Parser score, when the k-best file provides one.
    pub parser_score: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct KBestGroup {
    pub id: String,
    pub gold: DepTree,
    /// Sorted by rank; never empty.
    pub candidates: Vec<KBestCandidate>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

pub fn load_questions(paths: &[&Path], policy: ConllPolicy) -> Result<Vec<CompletionQuestion>> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(parse_questions(&read(p)?, policy)?);
    }
    Ok(all)
}

pub fn parse_questions(text: &str, policy: ConllPolicy) -> Result<Vec<CompletionQuestion>> {
    let doc = parse_conll_with(text, policy)?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (Vec<DepTree>, Option<usize>)> = HashMap::new();
    for AnnotatedTree { comments, tree, block } in doc.entries {
        let ann = Annotations::parse(&comments);
        let qid = ann
            .get("qid")
            .ok_or_else(|| Error::Data(format!("block {block}: completion candidate without qid=")))?
            .to_string();
        let gold: Option<usize> = ann.parsed("gold", block)?;
        let entry = groups.entry(qid.clone()).or_insert_with(|| {
            order.push(qid.clone());
            (Vec::new(), None)
        });
        entry.0.push(tree);
        if let Some(g) = gold {
            if entry.1.is_some_and(|old| old != g) {
                return Err(Error::Data(format!("question {qid}: conflicting gold= annotations")));
            }
            entry.1 = Some(g);
        }
    }
    order
        .into_iter()
        .map(|id| {
            let (candidates, gold) = groups.remove(&id).expect("grouped");
            if candidates.len() != CANDIDATES_PER_QUESTION {
                return Err(Error::Data(format!(
                    "question {id}: expected {CANDIDATES_PER_QUESTION} candidates, found {}",
                    candidates.len()
                )));
            }
            let gold = gold.ok_or_else(|| Error::Data(format!("question {id}: no gold= annotation")))?;
            if gold >= CANDIDATES_PER_QUESTION {
                return Err(Error::Data(format!("question {id}: gold index {gold} out of range")));
            }
            Ok(CompletionQuestion { id, candidates, gold })
        })
        .collect()
}

pub fn load_kbest(gold: &Path, kbest: &Path, k: usize, policy: ConllPolicy) -> Result<Vec<KBestGroup>> {
    parse_kbest(&read(gold)?, &read(kbest)?, k, policy)
}

/// Groups k-best candidates by sentence id, in order of first appearance,
/// keeping the `k` lowest-ranked per group.
pub fn parse_kbest(gold_text: &str, kbest_text: &str, k: usize, policy: ConllPolicy) -> Result<Vec<KBestGroup>> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let mut golds: HashMap<String, DepTree> = HashMap::new();
    for (ordinal, entry) in parse_conll_with(gold_text, policy)?.entries.into_iter().enumerate() {
        let ann = Annotations::parse(&entry.comments);
        let sid = ann.get("sid").map_or_else(|| (ordinal + 1).to_string(), str::to_string);
        if golds.insert(sid.clone(), entry.tree).is_some() {
            return Err(Error::Data(format!("duplicate gold sentence id {sid}")));
        }
    }

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<KBestCandidate>> = HashMap::new();
    for AnnotatedTree { comments, tree, block } in parse_conll_with(kbest_text, policy)?.entries {
        let ann = Annotations::parse(&comments);
        let sid = ann
            .get("sid")
            .ok_or_else(|| Error::Data(format!("block {block}: k-best candidate without sid=")))?
            .to_string();
        let list = groups.entry(sid.clone()).or_insert_with(|| {
            order.push(sid.clone());
            Vec::new()
        });
        let rank = match ann.parsed::<u32>("rank", block)? {
            Some(r) => r,
            None => list.len() as u32 + 1,
        };
        list.push(KBestCandidate {
            rank,
            tree,
            parser_score: ann.parsed("score", block)?,
        });
    }

    order
        .into_iter()
        .map(|id| {
            let mut candidates = groups.remove(&id).expect("grouped");
            candidates.sort_by_key(|c| c.rank);
            if candidates.windows(2).any(|w| w[0].rank == w[1].rank) {
                return Err(Error::Data(format!("sentence {id}: duplicate candidate ranks")));
            }
            candidates.truncate(k);
            let gold = golds
                .remove(&id)
                .ok_or_else(|| Error::Data(format!("sentence {id}: no gold tree with this id")))?;
            if candidates.iter().any(|c| c.tree.len() != gold.len()) {
                return Err(Error::Data(format!("sentence {id}: candidate length differs from gold")));
            }
            Ok(KBestGroup { id, gold, candidates })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deptree::write_conll;

    fn block(words: &[&str], heads: &[usize], ann: &str) -> String {
        write_conll(&DepTree::from_heads(words, heads).unwrap(), &[ann.to_string()])
    }

    #[test]
    fn two_questions_of_five() {
        let mut text = String::new();
        for q in 0..2 {
            for c in 0..5 {
                let ann = if c == 0 { format!("qid=q{q} gold={}", q + 1) } else { format!("qid=q{q}") };
                text.push_str(&block(&["a", "b"], &[2, 0], &ann));
            }
        }
        let qs = parse_questions(&text, ConllPolicy::default()).unwrap();
        assert_eq!(qs.len(), 2);
        assert_eq!(qs[0].id, "q0");
        assert_eq!(qs[1].gold, 2);
        assert!(qs.iter().all(|q| q.candidates.len() == 5));
    }

    #[test]
    fn wrong_candidate_count() {
        let mut text = String::new();
        for _ in 0..4 {
            text.push_str(&block(&["a"], &[0], "qid=x gold=0"));
        }
        assert!(matches!(parse_questions(&text, ConllPolicy::default()), Err(Error::Data(_))));
    }

    #[test]
    fn kbest_truncates_by_rank() {
        let gold = block(&["a", "b", "c"], &[2, 0, 2], "sid=s1");
        let mut kbest = String::new();
        for r in [5u32, 2, 7, 1, 3, 6, 4] {
            kbest.push_str(&block(&["a", "b", "c"], &[2, 0, 2], &format!("sid=s1 rank={r} score=-{r}.5")));
        }
        let groups = parse_kbest(&gold, &kbest, 4, ConllPolicy::default()).unwrap();
        let ranks: Vec<u32> = groups[0].candidates.iter().map(|c| c.rank).collect();
        assert_eq!(ranks, [1, 2, 3, 4]);
        assert_eq!(groups[0].candidates[1].parser_score, Some(-2.5));
    }

    #[test]
    fn kbest_requires_gold_and_unique_ranks() {
        let gold = block(&["a"], &[0], "sid=s1");
        let other = block(&["a"], &[0], "sid=s2 rank=1");
        assert!(parse_kbest(&gold, &other, 3, ConllPolicy::default()).is_err());
        let dup = block(&["a"], &[0], "sid=s1 rank=1").repeat(2);
        assert!(parse_kbest(&gold, &dup, 3, ConllPolicy::default()).is_err());
    }

    #[test]
    fn gold_ids_default_to_ordinals() {
        let gold = block(&["a"], &[0], "") + &block(&["b"], &[0], "");
        let kbest = block(&["b"], &[0], "sid=2 rank=1");
        let g = parse_kbest(&gold, &kbest, 1, ConllPolicy::default()).unwrap();
        assert_eq!(g[0].gold.form(1), "b");
    }
}
