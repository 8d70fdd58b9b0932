use rand::RngCore;

use super::{ModelParams, TreeLmConfig};
use crate::corpus::EncodedTree;
use crate::deptree::{EdgeType, ROOT};
use crate::error::{Error, Result};
use crate::nncore::{dropout_mask, softmax_log_prob, LayerState, LstmStack, StackCache};

pub struct TraceOptions<'a> {
    /// Source of dropout masks; `None` evaluates without dropout.
    pub dropout: Option<&'a mut dyn RngCore>,
    /// Compute the full softmax at every node.
    pub softmax: bool,
    /// Processing order of the tokens; defaults to BFS order. Any order in
    /// which each predecessor precedes its successors is accepted.
    pub order: Option<&'a [usize]>,
}

impl Default for TraceOptions<'_> {
    fn default() -> Self {
        TraceOptions {
            dropout: None,
            softmax: true,
            order: None,
        }
    }
}

impl<'a> TraceOptions<'a> {
    pub fn training(rng: &'a mut dyn RngCore) -> Self {
        TraceOptions {
            dropout: Some(rng),
            ..Default::default()
        }
    }

    /// No softmax, no dropout: states only.
    pub fn states_only() -> Self {
        TraceOptions {
            softmax: false,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TraceStats {
    /// Invocations of each edge-type stack, by [`EdgeType::index`].
    pub stack_calls: [usize; 4],
    /// Steps of the left-dependent summariser.
    pub ld_steps: usize,
    /// Full-vocabulary softmax evaluations.
    pub softmax_evals: usize,
}

/// Left-dependent summary of one head.
#[derive(Clone, Debug)]
pub struct LdContext {
    /// Left dependents, farthest first.
    pub deps: Vec<usize>,
    pub steps: Vec<StackCache>,
    /// `q_K`; zero when there are no left dependents.
    pub q: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct NodeCache {
    pub edge: EdgeType,
    pub pred: usize,
    pub pred_word: u32,
    pub stack: StackCache,
    pub ld: Option<LdContext>,
}

/// Cached forward pass over one tree.
#[derive(Clone, Debug)]
pub struct Trace {
    order: Vec<usize>,
    nodes: Vec<Option<NodeCache>>,
    states: Vec<Option<Vec<LayerState>>>,
    log_probs: Vec<f64>,
    pub stats: TraceStats,
}

impl Trace {
    /// Tokens in the order they were processed.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Per-layer states of a position (ROOT included).
    pub fn states(&self, node: usize) -> &[LayerState] {
        self.states[node].as_deref().expect("state computed")
    }

    /// Top-layer hidden state `H[:, node]`.
    pub fn hidden(&self, node: usize) -> &[f64] {
        &self.states(node).last().expect("stack has layers").h
    }

    /// `log p(w_t | D(w_t))` per token position (index 0 is ROOT, 0.0).
    /// Zero everywhere when the softmax was not requested.
    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn total_log_prob(&self) -> f64 {
        self.log_probs[1..].iter().sum()
    }

    pub fn edge(&self, node: usize) -> EdgeType {
        self.node(node).edge
    }

    pub fn predecessor(&self, node: usize) -> usize {
        self.node(node).pred
    }

    pub fn ld_context(&self, node: usize) -> Option<&LdContext> {
        self.node(node).ld.as_ref()
    }

    pub(crate) fn node(&self, node: usize) -> &NodeCache {
        self.nodes[node].as_ref().expect("node processed")
    }
}

/// ROOT state: every layer's `h` filled with `h0_fill`, `c` zero.
pub fn initial_states(cfg: &TreeLmConfig) -> Vec<LayerState> {
    (0..cfg.layers)
        .map(|_| LayerState {
            h: vec![cfg.h0_fill; cfg.hidden],
            c: vec![0.0; cfg.hidden],
        })
        .collect()
}

fn masks(stack: &LstmStack, rate: f64, rng: &mut Option<&mut dyn RngCore>) -> Option<Vec<Vec<f64>>> {
    let rng = rng.as_mut()?;
    if rate == 0.0 || stack.depth() == 1 {
        return None;
    }
    Some((1..stack.depth()).map(|_| dropout_mask(stack.hidden_size(), rate, &mut **rng)).collect())
}

fn check_ids(cfg: &TreeLmConfig, tree: &EncodedTree) -> Result<()> {
    if tree.ids.len() != tree.tree.len() + 1 {
        return Err(Error::Data("encoded tree needs one id per position plus ROOT".into()));
    }
    if let Some(&bad) = tree.ids.iter().find(|&&w| w as usize >= cfg.vocab_size) {
        return Err(Error::Data(format!("word id {bad} outside vocabulary of {}", cfg.vocab_size)));
    }
    Ok(())
}

fn summarise(
    params: &ModelParams,
    cfg: &TreeLmConfig,
    tree: &EncodedTree,
    head: usize,
    rng: &mut Option<&mut dyn RngCore>,
) -> Result<LdContext> {
    let ld = params
        .ld
        .as_ref()
        .ok_or_else(|| Error::Config("left-dependent summary needs the LdTreeLSTM variant".into()))?;
    let deps: Vec<usize> = tree.tree.left_deps(head).iter().rev().copied().collect();
    let mut state: Vec<LayerState> = (0..ld.depth()).map(|_| LayerState::zeros(cfg.hidden)).collect();
    let mut steps = Vec::with_capacity(deps.len());
    for &dep in &deps {
        let x = params.embed.col(tree.ids[dep] as usize);
        let cache = ld.forward(&x, &state, masks(ld, cfg.dropout, rng))?;
        state = cache.states();
        steps.push(cache);
    }
    let q = steps.last().map_or_else(|| vec![0.0; cfg.hidden], |s| s.output().to_vec());
    Ok(LdContext { deps, steps, q })
}

/// Runs the left-dependent summariser over `head`'s left dependents.
pub fn ld_summary(params: &ModelParams, cfg: &TreeLmConfig, tree: &EncodedTree, head: usize) -> Result<LdContext> {
    check_ids(cfg, tree)?;
    summarise(params, cfg, tree, head, &mut None)
}

/// Log-probabilities over the vocabulary given a top-layer hidden state.
pub fn node_log_probs(params: &ModelParams, h: &[f64]) -> Vec<f64> {
    let mut logits = params.out_bias.data().to_vec();
    params.out.matvec_add(h, &mut logits);
    softmax_log_prob(&logits)
}

pub fn trace_tree(
    params: &ModelParams,
    cfg: &TreeLmConfig,
    tree: &EncodedTree,
    opts: TraceOptions<'_>,
) -> Result<Trace> {
    check_ids(cfg, tree)?;
    let n = tree.tree.len();
    let bfs;
    let order: &[usize] = match opts.order {
        Some(o) => o,
        None => {
            bfs = tree.tree.bfs_order();
            &bfs
        }
    };
    let mut rng = opts.dropout;
    let mut trace = Trace {
        order: Vec::with_capacity(n),
        nodes: vec![None; n + 1],
        states: vec![None; n + 1],
        log_probs: vec![0.0; n + 1],
        stats: TraceStats::default(),
    };
    trace.states[ROOT] = Some(initial_states(cfg));

    for &t in order {
        if t == ROOT || t > n || trace.states[t].is_some() {
            return Err(Error::Ordering(format!("position {t} is not a pending token")));
        }
        let (pred, edge) = tree.tree.predecessor(t);
        let prev = trace.states[pred]
            .as_ref()
            .ok_or_else(|| Error::Ordering(format!("token {t} scheduled before its predecessor {pred}")))?;
        let pred_word = tree.ids[pred];
        let mut x = params.embed.col(pred_word as usize);
        let ld = if cfg.is_ld() && edge == EdgeType::Right {
            let ctx = summarise(params, cfg, tree, pred, &mut rng)?;
            trace.stats.ld_steps += ctx.steps.len();
            x.extend_from_slice(&ctx.q);
            Some(ctx)
        } else {
            None
        };
        let stack = params.stack(edge);
        let cache = stack.forward(&x, prev, masks(stack, cfg.dropout, &mut rng))?;
        trace.stats.stack_calls[edge.index()] += 1;
        if opts.softmax {
            let lp = node_log_probs(params, cache.output());
            trace.stats.softmax_evals += 1;
            trace.log_probs[t] = lp[tree.ids[t] as usize];
        }
        trace.states[t] = Some(cache.states());
        trace.nodes[t] = Some(NodeCache {
            edge,
            pred,
            pred_word,
            stack: cache,
            ld,
        });
        trace.order.push(t);
    }
    if trace.order.len() != n {
        return Err(Error::Ordering(format!(
            "processing order covers {} of {n} tokens",
            trace.order.len()
        )));
    }
    Ok(trace)
}

/// `log P(S | T)`: the sum of token log-probabilities, ROOT excluded.
pub fn log_prob_tree(params: &ModelParams, cfg: &TreeLmConfig, tree: &EncodedTree) -> Result<f64> {
    Ok(trace_tree(params, cfg, tree, TraceOptions::default())?.total_log_prob())
}
