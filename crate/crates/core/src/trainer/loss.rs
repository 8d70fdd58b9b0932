use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::NoiseDistribution;
use crate::corpus::EncodedTree;
use crate::error::{Error, Result};
use crate::nncore::{accumulate, axpy, dot, log_sigmoid, sigmoid, zeros_like};
use crate::treelm::{backward_tree, log_prob_tree, nll_tree, trace_tree, ModelParams, TraceOptions, TraceStats, TreeLmConfig};

/// `P_d(w)`: posterior that `w` came from the data rather than from `k`
/// noise draws, given its unnormalised score `W_ho[w]·h + b_o[w]`.
pub fn nce_posterior(score: f64, ln_z: f64, k: usize, noise_prob: f64) -> f64 {
    sigmoid(score - ln_z - (k as f64 * noise_prob).ln())
}

/// NCE objective for one tree, negated for minimisation. Accumulates
/// `scale · ∂/∂θ` (including `ln Ẑ`) into `grads` and returns the
/// unscaled loss with the trace counters. No full softmax is evaluated.
#[allow(clippy::too_many_arguments)]
pub fn nce_tree(
    params: &ModelParams,
    cfg: &TreeLmConfig,
    tree: &EncodedTree,
    noise: &NoiseDistribution,
    k: usize,
    scale: f64,
    rng: &mut dyn RngCore,
    dropout: bool,
    grads: &mut ModelParams,
) -> Result<(f64, TraceStats)> {
    if k == 0 {
        return Err(Error::Config("NCE needs at least one noise sample per token".into()));
    }
    if noise.len() != cfg.vocab_size {
        return Err(Error::Config("noise distribution does not match the vocabulary".into()));
    }
    let trace = if dropout {
        let mut drop_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
        trace_tree(params, cfg, tree, TraceOptions { softmax: false, ..TraceOptions::training(&mut drop_rng) })?
    } else {
        trace_tree(params, cfg, tree, TraceOptions::states_only())?
    };
    let ln_z = params.ln_z();
    let ln_k = (k as f64).ln();
    let n = tree.len();
    let mut top = vec![Vec::new(); n + 1];
    let mut loss = 0.0;
    let mut dln_z = 0.0;
    let mut noise_words = Vec::with_capacity(k);
    for t in 1..=n {
        let h = trace.hidden(t);
        let mut dh = vec![0.0; h.len()];
        noise_words.clear();
        noise_words.extend((0..k).map(|_| noise.sample(&mut *rng)));
        let target = tree.ids[t];
        for (j, &w) in std::iter::once(&target).chain(&noise_words).enumerate() {
            let wi = w as usize;
            let delta = dot(params.out.row(wi), h) + params.out_bias.get(wi, 0) - ln_z - ln_k - noise.prob(w).ln();
            // d(loss)/dΔ: σ(Δ) − 1 for the data word, σ(Δ) for noise words.
            let g = if j == 0 {
                loss -= log_sigmoid(delta);
                sigmoid(delta) - 1.0
            } else {
                loss -= log_sigmoid(-delta);
                sigmoid(delta)
            };
            if g == 0.0 {
                continue;
            }
            let gs = scale * g;
            axpy(gs, h, grads.out.row_mut(wi));
            grads.out_bias.data_mut()[wi] += gs;
            axpy(gs, params.out.row(wi), &mut dh);
            dln_z -= gs;
        }
        top[t] = dh;
    }
    grads.log_z.data_mut()[0] += dln_z;
    backward_tree(params, cfg, tree, &trace, &top, grads);
    Ok((loss, trace.stats))
}

/// Per-tree work item of a batch: the tree and its private RNG seed.
pub(crate) struct Item<'a> {
    pub tree: &'a EncodedTree,
    pub seed: u64,
}

pub(crate) struct BatchResult {
    pub loss: f64,
    pub grads: ModelParams,
    pub stats: TraceStats,
}

/// Sums per-tree gradients over `lanes` contiguous slices of the batch.
/// Each slice is reduced in order, then slices are reduced in order, so
/// the result does not depend on the number of worker threads.
pub(crate) fn batch_gradient<F>(params: &ModelParams, items: &[Item<'_>], lanes: usize, per_tree: F) -> Result<BatchResult>
where
    F: Fn(&Item<'_>, &mut ModelParams) -> Result<(f64, TraceStats)> + Sync,
{
    let chunk = items.len().div_ceil(lanes.max(1)).max(1);
    let partial: Vec<Result<BatchResult>> = items
        .par_chunks(chunk)
        .map(|slice| {
            let mut grads = zeros_like(params);
            let mut loss = 0.0;
            let mut stats = TraceStats::default();
            for item in slice {
                let (l, s) = per_tree(item, &mut grads)?;
                loss += l;
                add_stats(&mut stats, &s);
            }
            Ok(BatchResult { loss, grads, stats })
        })
        .collect();
    let mut iter = partial.into_iter();
    let mut total = match iter.next() {
        Some(first) => first?,
        None => {
            return Ok(BatchResult {
                loss: 0.0,
                grads: zeros_like(params),
                stats: TraceStats::default(),
            })
        }
    };
    for p in iter {
        let p = p?;
        total.loss += p.loss;
        accumulate(&mut total.grads, 1.0, &p.grads);
        add_stats(&mut total.stats, &p.stats);
    }
    Ok(total)
}

fn add_stats(acc: &mut TraceStats, s: &TraceStats) {
    for (a, b) in acc.stack_calls.iter_mut().zip(s.stack_calls) {
        *a += b;
    }
    acc.ld_steps += s.ld_steps;
    acc.softmax_evals += s.softmax_evals;
}

/// Mean negative log-likelihood per sentence over `batch` and its
/// gradient, without dropout.
pub fn nll_loss(params: &ModelParams, cfg: &TreeLmConfig, batch: &[EncodedTree]) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let items: Vec<Item<'_>> = batch.iter().map(|tree| Item { tree, seed: 0 }).collect();
    let r = batch_gradient(params, &items, 1, |item, g| {
        let nll = nll_tree(params, cfg, item.tree, scale, None, g)?;
        Ok((nll, TraceStats::default()))
    })?;
    Ok((r.loss * scale, r.grads))
}

/// Mean NCE loss per sentence over `batch` and its gradient, without
/// dropout; noise draws come from `seed`.
pub fn nce_loss(
    params: &ModelParams,
    cfg: &TreeLmConfig,
    batch: &[EncodedTree],
    noise: &NoiseDistribution,
    k: usize,
    seed: u64,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grads = zeros_like(params);
    let mut loss = 0.0;
    for tree in batch {
        loss += nce_tree(params, cfg, tree, noise, k, scale, &mut rng, false, &mut grads)?.0;
    }
    Ok((loss * scale, grads))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NllSummary {
    pub total: f64,
    pub tokens: usize,
    pub sentences: usize,
}

impl NllSummary {
    pub fn per_token(&self) -> f64 {
        self.total / self.tokens.max(1) as f64
    }

    pub fn perplexity(&self) -> f64 {
        self.per_token().exp()
    }
}

/// Exact negative log-likelihood of `trees` (full softmax, no dropout).
/// Trees are scored in parallel and summed in input order.
pub fn evaluate_nll(params: &ModelParams, cfg: &TreeLmConfig, trees: &[EncodedTree]) -> Result<NllSummary> {
    let scores: Vec<Result<f64>> = trees.par_iter().map(|t| log_prob_tree(params, cfg, t)).collect();
    let mut total = 0.0;
    for s in scores {
        total -= s?;
    }
    Ok(NllSummary {
        total,
        tokens: trees.iter().map(|t| t.len()).sum(),
        sentences: trees.len(),
    })
}
