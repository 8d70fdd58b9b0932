use std::collections::VecDeque;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ClassifierBundle, TreeModel};
use crate::corpus::{EncodedTree, WordId, ROOT_ID, UNK_ID};
use crate::deptree::{write_conll, DepTree, EdgeType, ROOT};
use crate::error::{Error, Result};
use crate::nncore::{softmax_log_prob, LayerState};
use crate::treelm::initial_states;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenLimits {
    pub max_nodes: usize,
    pub max_depth: usize,
    /// Dependents per side of one head.
    pub max_arity: usize,
    /// Softmax temperature; 0 selects the most probable word.
    pub temperature: f64,
    pub forbid_unk: bool,
    /// Draw classifier decisions from Bernoulli(p) instead of `p > 0.5`.
    pub sample_decisions: bool,
}

impl Default for GenLimits {
    fn default() -> Self {
        GenLimits {
            max_nodes: 60,
            max_depth: 10,
            max_arity: 10,
            temperature: 1.0,
            forbid_unk: false,
            sample_decisions: false,
        }
    }
}

impl GenLimits {
    pub fn validate(&self) -> Result<()> {
        if self.max_nodes == 0 || self.max_depth == 0 || self.max_arity == 0 {
            return Err(Error::Config("generation limits must be at least 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub tree: DepTree,
    /// Word id per position, ROOT id first.
    pub ids: Vec<WordId>,
    /// A limit stopped a dependent the classifiers asked for.
    pub truncated: bool,
    /// Model log-probability of the sampled words at temperature 1.
    pub log_prob: f64,
}

impl Generated {
    pub fn encoded(&self) -> EncodedTree {
        EncodedTree::from_ids(self.tree.clone(), self.ids.clone())
    }

    pub fn to_conll(&self, id: usize) -> String {
        let mut comments = vec![format!("sid={id}")];
        if self.truncated {
            comments.push("truncated=1".into());
        }
        write_conll(&self.tree, &comments)
    }
}

struct GenNode {
    word: WordId,
    depth: usize,
    states: Vec<LayerState>,
    /// Closest to the head first.
    left: Vec<usize>,
    right: Vec<usize>,
}

impl GenNode {
    fn hidden(&self) -> &[f64] {
        &self.states.last().expect("stack has layers").h
    }
}

struct Generator<'a> {
    model: &'a TreeModel,
    classifiers: &'a ClassifierBundle,
    limits: &'a GenLimits,
    rng: &'a mut dyn RngCore,
    nodes: Vec<GenNode>,
    log_prob: f64,
    truncated: bool,
}

impl Generator<'_> {
    fn decide(&mut self, edge: EdgeType, v: usize) -> bool {
        let node = &self.nodes[v];
        let x = ClassifierBundle::features(&self.model.params, node.hidden(), node.word);
        let p = self.classifiers.prob(edge, &x);
        if self.limits.sample_decisions {
            self.rng.gen_bool(p.clamp(0.0, 1.0))
        } else {
            p > 0.5
        }
    }

    fn sample_word(&mut self, h: &[f64]) -> Result<WordId> {
        let params = &self.model.params;
        let mut logits = params.out_bias.data().to_vec();
        params.out.matvec_add(h, &mut logits);
        let allowed = |w: usize| w != ROOT_ID as usize && !(self.limits.forbid_unk && w == UNK_ID as usize);
        let candidates: Vec<usize> = (0..logits.len()).filter(|&w| allowed(w)).collect();
        if candidates.is_empty() {
            return Err(Error::Config("vocabulary has no sampleable word".into()));
        }
        let t = self.limits.temperature;
        let word = if t == 0.0 {
            let mut best = candidates[0];
            for &w in &candidates[1..] {
                if logits[w] > logits[best] {
                    best = w;
                }
            }
            best
        } else {
            let max = candidates.iter().map(|&w| logits[w]).fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = candidates.iter().map(|&w| ((logits[w] - max) / t).exp()).collect();
            let dist = WeightedIndex::new(&weights).map_err(|e| Error::Numeric(format!("sampling weights: {e}")))?;
            candidates[dist.sample(&mut self.rng)]
        };
        self.log_prob += softmax_log_prob(&logits)[word];
        Ok(word as WordId)
    }

    /// Generates one dependent of `head` through `edge` from predecessor
    /// `pred` and returns its index.
    fn child(&mut self, edge: EdgeType, pred: usize, head: usize) -> Result<usize> {
        let params = &self.model.params;
        let cfg = &self.model.config;
        let mut x = params.embed.col(self.nodes[pred].word as usize);
        if cfg.is_ld() && edge == EdgeType::Right {
            x.extend(self.left_summary(head)?);
        }
        let cache = params.stack(edge).forward(&x, &self.nodes[pred].states, None)?;
        let word = self.sample_word(cache.output())?;
        let idx = self.nodes.len();
        self.nodes.push(GenNode {
            word,
            depth: self.nodes[head].depth + 1,
            states: cache.states(),
            left: Vec::new(),
            right: Vec::new(),
        });
        match edge {
            EdgeType::Left | EdgeType::NxLeft => self.nodes[head].left.push(idx),
            EdgeType::Right | EdgeType::NxRight => self.nodes[head].right.push(idx),
        }
        Ok(idx)
    }

    /// `q_K` over the already generated left dependents of `head`, farthest
    /// first.
    fn left_summary(&self, head: usize) -> Result<Vec<f64>> {
        let params = &self.model.params;
        let cfg = &self.model.config;
        let ld = params.ld.as_ref().ok_or_else(|| Error::Config("missing left-dependent stack".into()))?;
        let mut state: Vec<LayerState> = (0..ld.depth()).map(|_| LayerState::zeros(cfg.hidden)).collect();
        let mut q = vec![0.0; cfg.hidden];
        for &dep in self.nodes[head].left.iter().rev() {
            let cache = ld.forward(&params.embed.col(self.nodes[dep].word as usize), &state, None)?;
            q = cache.output().to_vec();
            state = cache.states();
        }
        Ok(q)
    }

    fn room(&self) -> bool {
        self.nodes.len() - 1 < self.limits.max_nodes
    }

    /// Adds the dependents of `v` on one side: a first dependent, then a
    /// chain of next siblings.
    fn side(&mut self, v: usize, first: EdgeType, next: EdgeType) -> Result<()> {
        if !self.decide(first, v) {
            return Ok(());
        }
        if self.nodes[v].depth >= self.limits.max_depth || !self.room() {
            self.truncated = true;
            return Ok(());
        }
        let mut u = self.child(first, v, v)?;
        let mut count = 1;
        while self.decide(next, u) {
            if count >= self.limits.max_arity || !self.room() {
                self.truncated = true;
                break;
            }
            u = self.child(next, u, v)?;
            count += 1;
        }
        Ok(())
    }

    fn run(mut self) -> Result<Generated> {
        self.child(EdgeType::Right, ROOT, ROOT)?;
        let mut queue = VecDeque::from([1usize]);
        while let Some(v) = queue.pop_front() {
            self.side(v, EdgeType::Left, EdgeType::NxLeft)?;
            self.side(v, EdgeType::Right, EdgeType::NxRight)?;
            let node = &self.nodes[v];
            queue.extend(node.left.iter().chain(&node.right));
        }
        self.assemble()
    }

    /// Lays the generated nodes out left to right and audits the result.
    fn assemble(self) -> Result<Generated> {
        let n = self.nodes.len() - 1;
        let mut sequence = Vec::with_capacity(n);
        in_order(&self.nodes, 1, &mut sequence);
        let mut position = vec![0usize; n + 1];
        for (i, &g) in sequence.iter().enumerate() {
            position[g] = i + 1;
        }
        let mut heads = vec![0usize; n];
        for (g, node) in self.nodes.iter().enumerate() {
            for &d in node.left.iter().chain(&node.right) {
                heads[position[d] - 1] = position[g];
            }
        }
        let vocab = &self.model.vocab;
        let forms: Vec<&str> = sequence.iter().map(|&g| vocab.word(self.nodes[g].word)).collect();
        let tree = DepTree::from_heads(&forms, &heads)
            .map_err(|e| Error::Ordering(format!("generated tree is invalid: {e}")))?;
        let bfs: Vec<usize> = tree.bfs_order();
        if !tree.is_projective() || bfs != position[1..] {
            return Err(Error::Ordering("generated tree disagrees with its generation order".into()));
        }
        let mut ids = vec![ROOT_ID];
        ids.extend(sequence.iter().map(|&g| self.nodes[g].word));
        Ok(Generated {
            tree,
            ids,
            truncated: self.truncated,
            log_prob: self.log_prob,
        })
    }
}

fn in_order(nodes: &[GenNode], v: usize, out: &mut Vec<usize>) {
    for &d in nodes[v].left.iter().rev() {
        in_order(nodes, d, out);
    }
    out.push(v);
    for &d in &nodes[v].right {
        in_order(nodes, d, out);
    }
}

/// Samples a tree top-down: ROOT's single dependent first, then for each
/// node in breadth-first order its left dependents (closest first, as long
/// as Add-Left / Add-Nx-Left agree) and then its right dependents. Words
/// come from the matching generation LSTM; ROOT is never sampled.
pub fn generate(
    model: &TreeModel,
    classifiers: &ClassifierBundle,
    limits: &GenLimits,
    rng: &mut dyn RngCore,
) -> Result<Generated> {
    limits.validate()?;
    classifiers.check(&model.config)?;
    let gen = Generator {
        model,
        classifiers,
        limits,
        rng,
        nodes: vec![GenNode {
            word: ROOT_ID,
            depth: 0,
            states: initial_states(&model.config),
            left: Vec::new(),
            right: Vec::new(),
        }],
        log_prob: 0.0,
        truncated: false,
    };
    gen.run()
}

/// `count` trees, each from its own generator seeded from `seed`; sampled
/// in parallel, returned in order.
pub fn generate_many(
    model: &TreeModel,
    classifiers: &ClassifierBundle,
    limits: &GenLimits,
    count: usize,
    seed: u64,
) -> Result<Vec<Generated>> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..count).map(|_| master.next_u64()).collect();
    seeds
        .par_iter()
        .map(|&s| generate(model, classifiers, limits, &mut ChaCha8Rng::seed_from_u64(s)))
        .collect()
}
