use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{log_prob_tree, nll_tree, ModelParams, TreeLmConfig, Variant};
use crate::corpus::{EncodedTree, ROOT_ID};
use crate::deptree::DepTree;
use crate::error::Result;
use crate::nncore::{grad_check, refine_probes, zeros_like, Coordinates, GradCheckReport};

/// Finite-difference check of the tree model's gradients on random trees.
#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub variant: Variant,
    pub hidden: usize,
    pub layers: usize,
    pub vocab_size: usize,
    pub trees: usize,
    /// Trees have between 1 and `max_nodes` tokens.
    pub max_nodes: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl SuiteConfig {
    pub fn new(variant: Variant, hidden: usize, layers: usize, seed: u64) -> Self {
        SuiteConfig {
            variant,
            hidden,
            layers,
            vocab_size: 12,
            trees: 5,
            max_nodes: 10,
            seed,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub report: GradCheckReport,
    /// Probes re-evaluated with the six-point stencil.
    pub rechecked: usize,
    pub trees: usize,
}

impl SuiteReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.report.passes(tolerance)
    }
}

/// Random projective tree: a random head splits its span, and the left and
/// right remainders are cut into random sub-spans headed the same way.
pub fn random_projective_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DepTree {
    fn span<R: Rng + ?Sized>(lo: usize, hi: usize, head: usize, heads: &mut [usize], rng: &mut R) {
        if lo > hi {
            return;
        }
        let r = rng.gen_range(lo..=hi);
        heads[r] = head;
        for (a, b) in [(lo, r - 1), (r + 1, hi)] {
            let mut start = a;
            while start <= b && b != 0 {
                let end = rng.gen_range(start..=b);
                span(start, end, r, heads, rng);
                start = end + 1;
            }
        }
    }
    let mut heads = vec![0; n + 1];
    span(1, n, 0, &mut heads, rng);
    let forms: Vec<String> = (1..=n).map(|i| format!("w{i}")).collect();
    DepTree::from_heads(&forms, &heads[1..]).expect("spans build a valid tree")
}

/// Checks `∂(−log P)/∂θ` on every coordinate for `config.trees` random
/// trees. Weights are drawn from ±1 and output biases from ±0.5 so that
/// few gradients sit near zero. Probes above 1% of the tolerance are
/// re-evaluated with a six-point stencil, since the f64 central difference
/// alone is only good to about 1e-9 absolute.
pub fn gradcheck_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    let mut cfg = TreeLmConfig::new(config.variant, config.vocab_size, config.hidden, config.layers);
    cfg.dropout = 0.0;
    cfg.init_range = 1.0;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(&cfg, &mut rng)?;
    for b in params.out_bias.data_mut() {
        *b = rng.gen_range(-0.5..0.5);
    }
    let mut total: Option<GradCheckReport> = None;
    let mut rechecked = 0;
    for _ in 0..config.trees {
        let n = rng.gen_range(1..=config.max_nodes.max(1));
        let tree = random_projective_tree(n, &mut rng);
        let mut ids = vec![ROOT_ID];
        ids.extend((0..n).map(|_| rng.gen_range(2..config.vocab_size.max(3) as u32)));
        let enc = EncodedTree::from_ids(tree, ids);
        let mut grads = zeros_like(&params);
        nll_tree(&params, &cfg, &enc, 1.0, None, &mut grads)?;
        let loss = |p: &ModelParams| -log_prob_tree(p, &cfg, &enc).unwrap_or(f64::NAN);
        let mut report = grad_check(&mut params, &grads, loss, 1e-5, Coordinates::All);
        rechecked += refine_probes(&mut report, &mut params, loss, config.tolerance * 1e-2);
        match &mut total {
            Some(t) => t.merge(report),
            None => total = Some(report),
        }
    }
    Ok(SuiteReport {
        report: total.unwrap_or(GradCheckReport {
            max_rel_error: 0.0,
            per_tensor: Vec::new(),
            worst: None,
            probes: Vec::new(),
        }),
        rechecked,
        trees: config.trees,
    })
}
