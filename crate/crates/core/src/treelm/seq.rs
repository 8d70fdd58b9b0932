use rand::Rng;

use super::forward::initial_states;
use super::{ModelParams, TreeLmConfig, Variant};
use crate::corpus::ROOT_ID;
use crate::deptree::EdgeType;
use crate::error::{Error, Result};
use crate::nncore::{axpy, softmax_log_prob, LayerState, LstmStack, Matrix, ParamSet, StackCache, StateGrad};

/// Left-to-right LSTM language model over the same vocabulary, with the
/// ROOT id acting as the begin-of-sentence token.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqLstm {
    pub embed: Matrix,
    pub out: Matrix,
    pub out_bias: Matrix,
    pub stack: LstmStack,
    pub h0_fill: f64,
}

struct SeqTrace {
    inputs: Vec<u32>,
    steps: Vec<StackCache>,
    log_probs: Vec<Vec<f64>>,
}

impl SeqLstm {
    pub fn init<R: Rng + ?Sized>(cfg: &TreeLmConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (v, s, d, r) = (cfg.vocab_size, cfg.embed, cfg.hidden, cfg.init_range);
        Ok(SeqLstm {
            embed: Matrix::uniform(s, v, r, rng),
            out: Matrix::uniform(v, d, r, rng),
            out_bias: Matrix::zeros(v, 1),
            stack: LstmStack::init(s, d, cfg.layers, r, cfg.forget_bias, rng),
            h0_fill: cfg.h0_fill,
        })
    }

    /// Copies the shared layers and the first-right-dependent stack of a
    /// TreeLSTM model.
    pub fn from_tree_model(params: &ModelParams, cfg: &TreeLmConfig) -> Result<Self> {
        if cfg.variant != Variant::TreeLstm {
            return Err(Error::Config("sequential copy requires the TreeLSTM variant".into()));
        }
        Ok(SeqLstm {
            embed: params.embed.clone(),
            out: params.out.clone(),
            out_bias: params.out_bias.clone(),
            stack: params.stack(EdgeType::Right).clone(),
            h0_fill: cfg.h0_fill,
        })
    }

    fn forward(&self, words: &[u32]) -> Result<SeqTrace> {
        let v = self.out.rows();
        if let Some(&bad) = words.iter().find(|&&w| w as usize >= v) {
            return Err(Error::Data(format!("word id {bad} outside vocabulary of {v}")));
        }
        let d = self.stack.hidden_size();
        let mut cfg = TreeLmConfig::new(Variant::TreeLstm, v, d, self.stack.depth());
        cfg.h0_fill = self.h0_fill;
        let mut state: Vec<LayerState> = initial_states(&cfg);
        let mut inputs = Vec::with_capacity(words.len());
        let mut steps = Vec::with_capacity(words.len());
        let mut log_probs = Vec::with_capacity(words.len());
        let mut prev_word = ROOT_ID;
        for &w in words {
            let cache = self.stack.forward(&self.embed.col(prev_word as usize), &state, None)?;
            let mut logits = self.out_bias.data().to_vec();
            self.out.matvec_add(cache.output(), &mut logits);
            log_probs.push(softmax_log_prob(&logits));
            state = cache.states();
            inputs.push(prev_word);
            steps.push(cache);
            prev_word = w;
        }
        Ok(SeqTrace {
            inputs,
            steps,
            log_probs,
        })
    }

    /// `log p(w_i | BOS, w_1..w_{i-1})` for each word.
    pub fn log_probs(&self, words: &[u32]) -> Result<Vec<f64>> {
        let tr = self.forward(words)?;
        Ok(words.iter().zip(&tr.log_probs).map(|(&w, lp)| lp[w as usize]).collect())
    }

    pub fn score(&self, words: &[u32]) -> Result<f64> {
        Ok(self.log_probs(words)?.iter().sum())
    }

    /// Accumulates `∂(−log P)/∂θ` into `grads`; returns `−log P`.
    pub fn nll_grad(&self, words: &[u32], grads: &mut SeqLstm) -> Result<f64> {
        let tr = self.forward(words)?;
        let (d, l) = (self.stack.hidden_size(), self.stack.depth());
        let mut carry: Vec<StateGrad> = (0..l).map(|_| StateGrad::zeros(d)).collect();
        let mut nll = 0.0;
        for i in (0..words.len()).rev() {
            let lp = &tr.log_probs[i];
            let w = words[i] as usize;
            nll -= lp[w];
            let h = tr.steps[i].output();
            let mut dlogits: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
            dlogits[w] -= 1.0;
            grads.out.add_outer(1.0, &dlogits, h);
            axpy(1.0, &dlogits, grads.out_bias.data_mut());
            let mut own = std::mem::replace(&mut carry, (0..l).map(|_| StateGrad::zeros(d)).collect());
            self.out.matvec_t_add(&dlogits, &mut own[l - 1].dh);
            let dx = self.stack.backward(&tr.steps[i], &own, &mut grads.stack, &mut carry);
            grads.embed.add_to_col(tr.inputs[i] as usize, 1.0, &dx);
        }
        Ok(nll)
    }
}

impl ParamSet for SeqLstm {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut v: Vec<(String, &Matrix)> = vec![
            ("embed".into(), &self.embed),
            ("out".into(), &self.out),
            ("out_bias".into(), &self.out_bias),
        ];
        v.extend(self.stack.tensors().into_iter().map(|(n, t)| (format!("lstm.{n}"), t)));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![&mut self.embed, &mut self.out, &mut self.out_bias];
        v.extend(self.stack.tensors_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{grad_check, zeros_like, Coordinates};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> SeqLstm {
        let mut cfg = TreeLmConfig::new(Variant::TreeLstm, 6, 4, 2);
        // Large weights keep gradients above the f64 finite-difference floor.
        cfg.init_range = 1.0;
        let mut m = SeqLstm::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        m.out_bias.data_mut().iter_mut().enumerate().for_each(|(i, b)| *b = 0.1 * i as f64);
        m
    }

    #[test]
    fn single_word_conditions_on_bos() {
        let m = model(1);
        let lp = m.log_probs(&[3]).unwrap();
        let step = m
            .stack
            .forward(&m.embed.col(ROOT_ID as usize), &initial_states(&TreeLmConfig::new(Variant::TreeLstm, 6, 4, 2)), None)
            .unwrap();
        let mut logits = m.out_bias.data().to_vec();
        m.out.matvec_add(step.output(), &mut logits);
        assert!((lp[0] - softmax_log_prob(&logits)[3]).abs() < 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut m = model(2);
        let words = [2u32, 5, 1, 4, 4];
        let mut g = zeros_like(&m);
        m.nll_grad(&words, &mut g).unwrap();
        let report = grad_check(&mut m, &g, |p| -p.score(&words).unwrap(), 1e-5, Coordinates::All);
        assert!(report.passes(1e-4), "{report:?}");
    }
}
