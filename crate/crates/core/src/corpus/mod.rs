//! Vocabulary construction, encoded corpora and task bundles.

mod bundles;

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::deptree::{DepTree, EdgeEvent};
use crate::error::{Error, Result};

pub use bundles::{
    load_kbest, load_questions, parse_kbest, parse_questions, Annotations, CompletionQuestion, KBestCandidate,
    KBestGroup,
};

pub type WordId = u32;

pub const ROOT_ID: WordId = 0;
pub const UNK_ID: WordId = 1;
pub const ROOT_TOKEN: &str = "<ROOT>";
pub const UNK_TOKEN: &str = "<UNK>";
const MAGIC: &str = "TLMVOCAB1";

/// Word ↔ id mapping with training counts.
///
/// ROOT and UNK occupy ids 0 and 1; remaining words follow in descending
/// frequency, ties broken lexicographically. ROOT carries a zero count and
/// UNK the total count of the words collapsed into it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, WordId>,
    lowercase: bool,
    min_count: u64,
}

impl Vocab {
    /// Keeps words seen more than `min_count` times.
    pub fn build(trees: &[DepTree], min_count: u64, lowercase: bool) -> Result<Vocab> {
        if trees.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut freq: HashMap<String, u64> = HashMap::new();
        for tree in trees {
            for tok in tree.tokens() {
                *freq.entry(normalize(&tok.form, lowercase).into_owned()).or_default() += 1;
            }
        }
        let mut unk_count = 0;
        let mut kept: Vec<(String, u64)> = Vec::new();
        for (w, c) in freq {
            if c <= min_count || w == ROOT_TOKEN || w == UNK_TOKEN {
                unk_count += c;
            } else {
                kept.push((w, c));
            }
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut words = vec![ROOT_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut counts = vec![0, unk_count];
        for (w, c) in kept {
            words.push(w);
            counts.push(c);
        }
        Ok(Vocab::from_parts(words, counts, lowercase, min_count))
    }

    fn from_parts(words: Vec<String>, counts: Vec<u64>, lowercase: bool, min_count: u64) -> Vocab {
        let index = words
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, w)| (w.clone(), i as WordId))
            .collect();
        Vocab {
            words,
            counts,
            index,
            lowercase,
            min_count,
        }
    }

    /// A vocabulary over the given words, in order, each with count 1.
    /// Mostly useful for synthetic data.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Vocab {
        let mut all = vec![ROOT_TOKEN.to_string(), UNK_TOKEN.to_string()];
        all.extend(words.iter().map(|w| w.as_ref().to_string()));
        let mut counts = vec![1; all.len()];
        counts[0] = 0;
        Vocab::from_parts(all, counts, false, 0)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    /// Id of `form` after normalisation, UNK when absent.
    pub fn id(&self, form: &str) -> WordId {
        self.lookup(form).unwrap_or(UNK_ID)
    }

    pub fn lookup(&self, form: &str) -> Option<WordId> {
        self.index.get(normalize(form, self.lowercase).as_ref()).copied()
    }

    pub fn word(&self, id: WordId) -> &str {
        &self.words[id as usize]
    }

    pub fn count(&self, id: WordId) -> u64 {
        self.counts[id as usize]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Ids for every position of `tree`, ROOT first.
    pub fn ids(&self, tree: &DepTree) -> Vec<WordId> {
        std::iter::once(ROOT_ID)
            .chain(tree.tokens().iter().map(|t| self.id(&t.form)))
            .collect()
    }

    pub fn encode(&self, tree: &DepTree) -> EncodedTree {
        EncodedTree {
            ids: self.ids(tree),
            tree: tree.clone(),
        }
    }

    pub fn encode_all(&self, trees: &[DepTree], split: Split) -> EncodedCorpus {
        EncodedCorpus {
            trees: trees.iter().map(|t| self.encode(t)).collect(),
            split,
        }
    }

    /// Forms as the model sees them (UNK-collapsed, normalised).
    pub fn decode(&self, encoded: &EncodedTree) -> Vec<String> {
        encoded.ids[1..].iter().map(|&i| self.word(i).to_string()).collect()
    }

    /// Serialised vocabulary file contents.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{MAGIC}\tlowercase={}\tmin_count={}\troot={ROOT_ID}\tunk={UNK_ID}\n",
            u8::from(self.lowercase),
            self.min_count
        );
        for (w, c) in self.words.iter().zip(&self.counts) {
            let _ = writeln!(out, "{w}\t{c}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Vocab> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Data("empty vocabulary file".into()))?;
        let mut fields = header.split('\t');
        if fields.next() != Some(MAGIC) {
            return Err(Error::Data(format!("vocabulary header must start with {MAGIC}")));
        }
        let mut lowercase = false;
        let mut min_count = 0;
        for f in fields {
            match f.split_once('=') {
                Some(("lowercase", v)) => lowercase = v == "1",
                Some(("min_count", v)) => {
                    min_count = v.parse().map_err(|_| Error::Data(format!("bad min_count `{v}`")))?
                }
                Some(("root", v)) if v == ROOT_ID.to_string() => {}
                Some(("unk", v)) if v == UNK_ID.to_string() => {}
                _ => return Err(Error::Data(format!("unsupported vocabulary header field `{f}`"))),
            }
        }
        let mut words = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in lines.enumerate() {
            let (w, c) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::Parse {
                    line: i + 2,
                    msg: "expected word<TAB>count".into(),
                })?;
            let c: u64 = c.parse().map_err(|_| Error::Parse {
                line: i + 2,
                msg: format!("count `{c}` is not an integer"),
            })?;
            words.push(w.to_string());
            counts.push(c);
        }
        if words.len() < 2 || words[0] != ROOT_TOKEN || words[1] != UNK_TOKEN {
            return Err(Error::Data("vocabulary must list ROOT and UNK first".into()));
        }
        Ok(Vocab::from_parts(words, counts, lowercase, min_count))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Vocab::from_text(&text)
    }

    /// SHA-256 of the serialised file, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

fn normalize(form: &str, lowercase: bool) -> Cow<'_, str> {
    if lowercase {
        Cow::Owned(form.to_lowercase())
    } else {
        Cow::Borrowed(form)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// A tree with one vocabulary id per position (`ids[0]` is ROOT).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedTree {
    pub tree: DepTree,
    pub ids: Vec<WordId>,
}

impl EncodedTree {
    /// Tree whose forms are the given ids, for synthetic data.
    pub fn from_ids(tree: DepTree, ids: Vec<WordId>) -> Self {
        assert_eq!(ids.len(), tree.len() + 1);
        assert_eq!(ids[0], ROOT_ID);
        EncodedTree { tree, ids }
    }

    pub fn events(&self) -> Vec<EdgeEvent> {
        self.tree.edge_events(&self.ids)
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct EncodedCorpus {
    pub trees: Vec<EncodedTree>,
    pub split: Split,
}

impl EncodedCorpus {
    pub fn token_count(&self) -> usize {
        self.trees.iter().map(|t| t.len()).sum()
    }

    pub fn unk_rate(&self) -> f64 {
        let unk = self
            .trees
            .iter()
            .flat_map(|t| t.ids[1..].iter())
            .filter(|&&i| i == UNK_ID)
            .count();
        unk as f64 / self.token_count().max(1) as f64
    }
}

/// Moves a seeded uniform sample (without replacement) of `size` items
/// into a held-out set. Both halves keep their original relative order.
pub fn split_validation<T>(items: Vec<T>, size: usize, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if size > items.len() {
        return Err(Error::Config(format!(
            "validation sample of {size} exceeds corpus of {}",
            items.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held = vec![false; items.len()];
    for i in sample(&mut rng, items.len(), size) {
        held[i] = true;
    }
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (item, h) in items.into_iter().zip(held) {
        if h {
            valid.push(item);
        } else {
            train.push(item);
        }
    }
    Ok((train, valid))
}
