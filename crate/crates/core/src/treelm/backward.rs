use rand::RngCore;

use super::forward::{node_log_probs, trace_tree, LdContext, Trace, TraceOptions};
use super::{ModelParams, TreeLmConfig};
use crate::corpus::EncodedTree;
use crate::error::Result;
use crate::nncore::{axpy, StateGrad};

#[derive(Clone, Debug)]
pub struct BackwardResult {
    /// Per position, the gradient reaching each layer's state from the
    /// steps that consumed it (the node's own output gradient excluded).
    pub state_grads: Vec<Vec<StateGrad>>,
}

/// Backpropagates through the tree recurrence.
///
/// `top[t]` is the loss gradient with respect to `H[:, t]` (an empty
/// vector means zero). Parameter gradients are accumulated into `grads`.
pub fn backward_tree(
    params: &ModelParams,
    cfg: &TreeLmConfig,
    tree: &EncodedTree,
    trace: &Trace,
    top: &[Vec<f64>],
    grads: &mut ModelParams,
) -> BackwardResult {
    let n = tree.tree.len();
    assert_eq!(top.len(), n + 1, "one output gradient per position");
    let (s, d, l) = (cfg.embed, cfg.hidden, cfg.layers);
    let mut sg: Vec<Vec<StateGrad>> = (0..=n).map(|_| (0..l).map(|_| StateGrad::zeros(d)).collect()).collect();

    for &t in trace.order().iter().rev() {
        let node = trace.node(t);
        let mut own = sg[t].clone();
        if !top[t].is_empty() {
            axpy(1.0, &top[t], &mut own[l - 1].dh);
        }
        let e = node.edge.index();
        let dx = params.stacks[e].backward(&node.stack, &own, &mut grads.stacks[e], &mut sg[node.pred]);
        grads.embed.add_to_col(node.pred_word as usize, 1.0, &dx[..s]);
        if let Some(ctx) = &node.ld {
            ld_backward(params, cfg, tree, ctx, &dx[s..], grads);
        }
    }
    BackwardResult { state_grads: sg }
}

fn ld_backward(
    params: &ModelParams,
    cfg: &TreeLmConfig,
    tree: &EncodedTree,
    ctx: &LdContext,
    dq: &[f64],
    grads: &mut ModelParams,
) {
    let (Some(ld), Some(ld_grads)) = (params.ld.as_ref(), grads.ld.as_mut()) else {
        return;
    };
    let (d, l) = (cfg.hidden, cfg.layers);
    let mut carry: Vec<StateGrad> = (0..l).map(|_| StateGrad::zeros(d)).collect();
    axpy(1.0, dq, &mut carry[l - 1].dh);
    for (k, cache) in ctx.steps.iter().enumerate().rev() {
        let own = std::mem::replace(&mut carry, (0..l).map(|_| StateGrad::zeros(d)).collect());
        let dx = ld.backward(cache, &own, ld_grads, &mut carry);
        grads.embed.add_to_col(tree.ids[ctx.deps[k]] as usize, 1.0, &dx);
    }
}

/// Full-softmax output layer for `−scale · log P(S|T)`.
///
/// Accumulates output-layer gradients into `grads` and returns the
/// unscaled negative log-likelihood with the per-node hidden gradients.
pub fn nll_output_grads(
    params: &ModelParams,
    tree: &EncodedTree,
    trace: &Trace,
    scale: f64,
    grads: &mut ModelParams,
) -> (f64, Vec<Vec<f64>>) {
    let n = tree.tree.len();
    let mut top = vec![Vec::new(); n + 1];
    let mut nll = 0.0;
    for t in 1..=n {
        let h = trace.hidden(t);
        let lp = node_log_probs(params, h);
        let w = tree.ids[t] as usize;
        nll -= lp[w];
        let mut dlogits: Vec<f64> = lp.iter().map(|x| scale * x.exp()).collect();
        dlogits[w] -= scale;
        grads.out.add_outer(1.0, &dlogits, h);
        axpy(1.0, &dlogits, grads.out_bias.data_mut());
        let mut dh = vec![0.0; h.len()];
        params.out.matvec_t_add(&dlogits, &mut dh);
        top[t] = dh;
    }
    (nll, top)
}

/// Forward and backward for `−scale · log P(S|T)`; returns the unscaled
/// negative log-likelihood.
pub fn nll_tree(
    params: &ModelParams,
    cfg: &TreeLmConfig,
    tree: &EncodedTree,
    scale: f64,
    dropout: Option<&mut dyn RngCore>,
    grads: &mut ModelParams,
) -> Result<f64> {
    let opts = TraceOptions {
        dropout,
        softmax: false,
        order: None,
    };
    let trace = trace_tree(params, cfg, tree, opts)?;
    let (nll, top) = nll_output_grads(params, tree, &trace, scale, grads);
    backward_tree(params, cfg, tree, &trace, &top, grads);
    Ok(nll)
}
