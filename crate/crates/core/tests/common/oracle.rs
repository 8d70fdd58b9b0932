//! Independent scalar re-implementation of the tree language model,
//! generic over the number type, plus double-double arithmetic.
//!
//! In `f64` it cross-checks the library forward pass. In [`Dd`] (about 32
//! significant digits) its central differences have no practical round-off
//! floor, which resolves gradient coordinates too small for an `f64`
//! finite difference at ε = 1e-5 (absolute noise around 1e-10).

use std::collections::{HashMap, VecDeque};
use std::ops::{Add, Div, Mul, Neg, Sub};

use deptree_lm::corpus::EncodedTree;
use deptree_lm::nncore::{grad_check, relative_error, zeros_like, Coordinates, ParamSet};
use deptree_lm::treelm::{nll_tree, ModelParams, TreeLmConfig};

pub trait Real:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn of(x: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn to_f64(self) -> f64;

    fn tanh(self) -> Self {
        let neg = self.to_f64() < 0.0;
        let a = if neg { -self } else { self };
        let e = (-(a + a)).exp();
        let t = (Self::of(1.0) - e) / (Self::of(1.0) + e);
        if neg {
            -t
        } else {
            t
        }
    }

    fn sigmoid(self) -> Self {
        Self::of(1.0) / (Self::of(1.0) + (-self).exp())
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    fn new((hi, lo): (f64, f64)) -> Dd {
        Dd { hi, lo }
    }

    fn scale_pow2(self, k: i32) -> Dd {
        let f = 2f64.powi(k);
        Dd {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, y: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, y.hi);
        let (t, f) = two_sum(self.lo, y.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Dd::new(quick_two_sum(s, e + f))
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, y: Dd) -> Dd {
        self + (-y)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, y: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, y.hi);
        Dd::new(quick_two_sum(p, e + (self.hi * y.lo + self.lo * y.hi)))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, y: Dd) -> Dd {
        let q1 = self.hi / y.hi;
        let r = self - y * Dd::of(q1);
        let q2 = r.hi / y.hi;
        let r = r - y * Dd::of(q2);
        let q3 = r.hi / y.hi;
        Dd::new(quick_two_sum(q1, q2)) + Dd::of(q3)
    }
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl Real for Dd {
    fn of(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    fn exp(self) -> Self {
        if self.hi < -745.0 {
            return Dd::of(0.0);
        }
        assert!(self.hi < 709.0, "exp overflow in oracle");
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Dd::of(k)).scale_pow2(-10);
        // expm1(r) by Taylor series; |r| < 4e-4.
        let mut s = r;
        let mut term = r;
        for i in 2..=16 {
            term = term * r / Dd::of(i as f64);
            s = s + term;
        }
        for _ in 0..10 {
            s = s * Dd::of(2.0) + s * s;
        }
        (s + Dd::of(1.0)).scale_pow2(k as i32)
    }

    fn ln(self) -> Self {
        assert!(self.hi > 0.0, "log of non-positive value in oracle");
        let mut y = Dd::of(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Dd::of(1.0);
        }
        y
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

struct Tensor<R> {
    cols: usize,
    data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    fn at(&self, r: usize, c: usize) -> R {
        self.data[r * self.cols + c]
    }
}

/// Copy of a parameter set in number type `R`, optionally with one
/// coordinate shifted.
pub struct OracleModel<'a, R> {
    cfg: &'a TreeLmConfig,
    tensors: Vec<Tensor<R>>,
    index: HashMap<String, usize>,
}

impl<'a, R: Real> OracleModel<'a, R> {
    pub fn new(params: &ModelParams, cfg: &'a TreeLmConfig, shift: Option<(usize, usize, R)>) -> Self {
        let mut tensors = Vec::new();
        let mut index = HashMap::new();
        for (ti, (name, t)) in params.tensors().into_iter().enumerate() {
            let mut data: Vec<R> = t.data().iter().map(|&x| R::of(x)).collect();
            if let Some((st, sk, delta)) = shift {
                if st == ti {
                    data[sk] = data[sk] + delta;
                }
            }
            index.insert(name, ti);
            tensors.push(Tensor { cols: t.cols(), data });
        }
        OracleModel { cfg, tensors, index }
    }

    fn t(&self, name: &str) -> &Tensor<R> {
        &self.tensors[self.index[name]]
    }

    fn cell(&self, prefix: &str, x: &[R], h: &[R], c: &[R]) -> (Vec<R>, Vec<R>) {
        let d = self.cfg.hidden;
        let gate = |g: &str, r: usize| {
            let wx = self.t(&format!("{prefix}.w_{g}x"));
            let wh = self.t(&format!("{prefix}.w_{g}h"));
            let mut acc = self.t(&format!("{prefix}.b_{g}")).at(r, 0);
            for (j, &xj) in x.iter().enumerate() {
                acc = acc + wx.at(r, j) * xj;
            }
            for (j, &hj) in h.iter().enumerate() {
                acc = acc + wh.at(r, j) * hj;
            }
            acc
        };
        let mut hn = Vec::with_capacity(d);
        let mut cn = Vec::with_capacity(d);
        for r in 0..d {
            let u = gate("u", r).tanh();
            let i = gate("i", r).sigmoid();
            let f = gate("f", r).sigmoid();
            let o = gate("o", r).sigmoid();
            let cr = f * c[r] + i * u;
            cn.push(cr);
            hn.push(o * cr.tanh());
        }
        (hn, cn)
    }

    fn stack(&self, name: &str, x: &[R], prev: &[(Vec<R>, Vec<R>)]) -> Vec<(Vec<R>, Vec<R>)> {
        let mut out: Vec<(Vec<R>, Vec<R>)> = Vec::with_capacity(prev.len());
        for (l, (h, c)) in prev.iter().enumerate() {
            let input = if l == 0 { x.to_vec() } else { out[l - 1].0.clone() };
            out.push(self.cell(&format!("{name}.layer{}", l + 1), &input, h, c));
        }
        out
    }

    fn embedding(&self, word: u32) -> Vec<R> {
        let e = self.t("embed");
        (0..self.cfg.embed).map(|r| e.at(r, word as usize)).collect()
    }

    /// `log P(S|T)` computed from the head array alone.
    pub fn log_prob(&self, tree: &EncodedTree) -> R {
        let cfg = self.cfg;
        let n = tree.len();
        let heads: Vec<usize> = std::iter::once(0).chain(tree.tree.heads()).collect();
        let left = |v: usize| -> Vec<usize> { (1..v).rev().filter(|&u| heads[u] == v).collect() };
        let right = |v: usize| -> Vec<usize> { (v + 1..=n).filter(|&u| heads[u] == v).collect() };
        let zero = R::of(0.0);
        let mut states: Vec<Option<Vec<(Vec<R>, Vec<R>)>>> = vec![None; n + 1];
        states[0] = Some(vec![(vec![R::of(cfg.h0_fill); cfg.hidden], vec![zero; cfg.hidden]); cfg.layers]);
        let names = ["gen_left", "gen_right", "gen_nx_left", "gen_nx_right"];
        let mut total = zero;
        let mut queue = VecDeque::from([0usize]);
        while let Some(v) = queue.pop_front() {
            for (side, deps) in [(0usize, left(v)), (1, right(v))] {
                for (k, &t) in deps.iter().enumerate() {
                    let (pred, stack) = if k == 0 { (v, side) } else { (deps[k - 1], side + 2) };
                    let mut x = self.embedding(tree.ids[pred]);
                    if cfg.is_ld() && stack == 1 {
                        let mut q: Vec<(Vec<R>, Vec<R>)> =
                            vec![(vec![zero; cfg.hidden], vec![zero; cfg.hidden]); cfg.layers];
                        for &u in left(v).iter().rev() {
                            q = self.stack("ld", &self.embedding(tree.ids[u]), &q);
                        }
                        if left(v).is_empty() {
                            x.extend(vec![zero; cfg.hidden]);
                        } else {
                            x.extend(q[cfg.layers - 1].0.iter().copied());
                        }
                    }
                    let prev = states[pred].clone().expect("predecessor first");
                    let st = self.stack(names[stack], &x, &prev);
                    let h = &st[cfg.layers - 1].0;
                    let out = self.t("out");
                    let bias = self.t("out_bias");
                    let logits: Vec<R> = (0..cfg.vocab_size)
                        .map(|w| {
                            let mut acc = bias.at(w, 0);
                            for (j, &hj) in h.iter().enumerate() {
                                acc = acc + out.at(w, j) * hj;
                            }
                            acc
                        })
                        .collect();
                    let m = logits.iter().map(|l| l.to_f64()).fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = zero;
                    for &l in &logits {
                        sum = sum + (l - R::of(m)).exp();
                    }
                    total = total + logits[tree.ids[t] as usize] - R::of(m) - sum.ln();
                    states[t] = Some(st);
                    queue.push_back(t);
                }
            }
        }
        total
    }
}

/// Double-double central difference of `−log P(S|T)` in one coordinate.
pub fn dd_numeric_grad(params: &ModelParams, cfg: &TreeLmConfig, tree: &EncodedTree, tensor: usize, index: usize) -> f64 {
    let eps = 1e-8;
    let plus = OracleModel::new(params, cfg, Some((tensor, index, Dd::of(eps)))).log_prob(tree);
    let minus = OracleModel::new(params, cfg, Some((tensor, index, Dd::of(-eps)))).log_prob(tree);
    ((minus - plus) / Dd::of(2.0 * eps)).to_f64()
}

#[derive(Clone, Debug, Default)]
pub struct FidelityOutcome {
    pub probes: usize,
    /// Probes above 1% of the tolerance in the `f64` check, re-evaluated
    /// in double-double.
    pub rechecked: usize,
    /// Maximum relative error after re-evaluation.
    pub max_rel_error: f64,
    /// Largest `f64` relative error before re-evaluation.
    pub f64_max_rel_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Checks every coordinate's analytic gradient of `−log P(S|T)` with the
/// library's `f64` central differences (ε = 1e-5); coordinates above 1% of
/// `tol` are re-evaluated with the double-double oracle, since the `f64`
/// estimate alone is too noisy to certify errors near `tol`.
pub fn gradient_fidelity(params: &mut ModelParams, cfg: &TreeLmConfig, tree: &EncodedTree, tol: f64) -> FidelityOutcome {
    let mut grads = zeros_like(params);
    nll_tree(params, cfg, tree, 1.0, None, &mut grads).unwrap();
    let loss = |p: &ModelParams| -deptree_lm::treelm::log_prob_tree(p, cfg, tree).unwrap();
    let report = grad_check(params, &grads, loss, 1e-5, Coordinates::All);
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let mut out = FidelityOutcome {
        probes: report.probes.len(),
        f64_max_rel_error: report.max_rel_error,
        ..Default::default()
    };
    for p in &report.probes {
        let mut numeric = p.numeric;
        let mut err = p.rel_error();
        if err >= tol * 1e-2 {
            out.rechecked += 1;
            numeric = dd_numeric_grad(params, cfg, tree, p.tensor, p.index);
            err = relative_error(p.analytic, numeric);
        }
        if err > out.max_rel_error || out.worst.is_none() {
            out.max_rel_error = out.max_rel_error.max(err);
            out.worst = Some((names[p.tensor].clone(), p.index, p.analytic, numeric));
        }
    }
    out
}
