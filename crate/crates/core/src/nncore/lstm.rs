//! Deep LSTM cell with a hand-written backward pass.
//!
//! One layer computes
//!
//! ```text
//! u = tanh(W_ux x + W_uh h' + b_u)
//! i = σ(W_ix x + W_ih h' + b_i)
//! f = σ(W_fx x + W_fh h' + b_f)
//! o = σ(W_ox x + W_oh h' + b_o)
//! c = f ⊙ c' + i ⊙ u
//! h = o ⊙ tanh(c)
//! ```
//!
//! where `(h', c')` is the state of the *predecessor* step, which in a tree
//! model is not necessarily the previous step in time. No peepholes.

use rand::Rng;

use super::matrix::{axpy, Matrix};
use super::ops::sigmoid;
use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    pub w_ux: Matrix,
    pub w_uh: Matrix,
    pub w_ix: Matrix,
    pub w_ih: Matrix,
    pub w_fx: Matrix,
    pub w_fh: Matrix,
    pub w_ox: Matrix,
    pub w_oh: Matrix,
    pub b_u: Matrix,
    pub b_i: Matrix,
    pub b_f: Matrix,
    pub b_o: Matrix,
}

/// Per-layer hidden and cell vectors of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LayerState {
    pub fn zeros(d: usize) -> Self {
        LayerState {
            h: vec![0.0; d],
            c: vec![0.0; d],
        }
    }
}

/// Gradient flowing into a stored [`LayerState`].
#[derive(Clone, Debug, PartialEq)]
pub struct StateGrad {
    pub dh: Vec<f64>,
    pub dc: Vec<f64>,
}

impl StateGrad {
    pub fn zeros(d: usize) -> Self {
        StateGrad {
            dh: vec![0.0; d],
            dc: vec![0.0; d],
        }
    }
}

/// Everything one cell step needs for its backward pass.
#[derive(Clone, Debug)]
pub struct CellCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub u: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let wx = || Matrix::zeros(hidden, input);
        let wh = || Matrix::zeros(hidden, hidden);
        let b = || Matrix::zeros(hidden, 1);
        LstmLayer {
            w_ux: wx(),
            w_uh: wh(),
            w_ix: wx(),
            w_ih: wh(),
            w_fx: wx(),
            w_fh: wh(),
            w_ox: wx(),
            w_oh: wh(),
            b_u: b(),
            b_i: b(),
            b_f: b(),
            b_o: b(),
        }
    }

    /// Weights uniform in `[-range, range]`, biases zero except the forget
    /// gate bias.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, range: f64, forget_bias: f64, rng: &mut R) -> Self {
        let mut layer = LstmLayer::zeros(input, hidden);
        for w in layer.weights_mut() {
            *w = Matrix::uniform(w.rows(), w.cols(), range, rng);
        }
        layer.b_f.fill(forget_bias);
        layer
    }

    fn weights_mut(&mut self) -> [&mut Matrix; 8] {
        [
            &mut self.w_ux,
            &mut self.w_uh,
            &mut self.w_ix,
            &mut self.w_ih,
            &mut self.w_fx,
            &mut self.w_fh,
            &mut self.w_ox,
            &mut self.w_oh,
        ]
    }

    pub fn input_size(&self) -> usize {
        self.w_ux.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_ux.rows()
    }

    fn gate(&self, wx: &Matrix, wh: &Matrix, b: &Matrix, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
        let mut a = b.data().to_vec();
        wx.matvec_add(x, &mut a);
        wh.matvec_add(h_prev, &mut a);
        a
    }

    pub fn forward(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<CellCache> {
        assert_eq!(x.len(), self.input_size(), "input width");
        assert_eq!(h_prev.len(), self.hidden_size(), "hidden width");
        assert_eq!(c_prev.len(), self.hidden_size(), "cell width");
        let mut u = self.gate(&self.w_ux, &self.w_uh, &self.b_u, x, h_prev);
        let mut i = self.gate(&self.w_ix, &self.w_ih, &self.b_i, x, h_prev);
        let mut f = self.gate(&self.w_fx, &self.w_fh, &self.b_f, x, h_prev);
        let mut o = self.gate(&self.w_ox, &self.w_oh, &self.b_o, x, h_prev);
        u.iter_mut().for_each(|v| *v = v.tanh());
        for g in [&mut i, &mut f, &mut o] {
            g.iter_mut().for_each(|v| *v = sigmoid(*v));
        }
        let c: Vec<f64> = (0..u.len()).map(|k| f[k] * c_prev[k] + i[k] * u[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = o.iter().zip(&tanh_c).map(|(a, b)| a * b).collect();
        if !h.iter().chain(&c).all(|v| v.is_finite()) {
            let bad = |v: &[f64]| v.iter().filter(|x| !x.is_finite()).count();
            return Err(Error::Numeric(format!(
                "LSTM cell produced non-finite state: non-finite entries u={} i={} f={} o={} c={} (input finite: {}, h_prev finite: {})",
                bad(&u),
                bad(&i),
                bad(&f),
                bad(&o),
                bad(&c),
                x.iter().all(|v| v.is_finite()),
                h_prev.iter().all(|v| v.is_finite()),
            )));
        }
        Ok(CellCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            u,
            i,
            f,
            o,
            c,
            tanh_c,
            h,
        })
    }

    /// Backward through one step. `dh`/`dc` are the total gradients on the
    /// step's output state. Accumulates parameter gradients into `grads`
    /// and input gradients into `dx`, `dh_prev`, `dc_prev`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        cache: &CellCache,
        dh: &[f64],
        dc: &[f64],
        grads: &mut LstmLayer,
        dx: &mut [f64],
        dh_prev: &mut [f64],
        dc_prev: &mut [f64],
    ) {
        let d = self.hidden_size();
        let mut a_u = vec![0.0; d];
        let mut a_i = vec![0.0; d];
        let mut a_f = vec![0.0; d];
        let mut a_o = vec![0.0; d];
        for k in 0..d {
            let (u, i, f, o, t) = (cache.u[k], cache.i[k], cache.f[k], cache.o[k], cache.tanh_c[k]);
            let dc_total = dc[k] + dh[k] * o * (1.0 - t * t);
            a_o[k] = dh[k] * t * o * (1.0 - o);
            a_f[k] = dc_total * cache.c_prev[k] * f * (1.0 - f);
            a_i[k] = dc_total * u * i * (1.0 - i);
            a_u[k] = dc_total * i * (1.0 - u * u);
            dc_prev[k] += dc_total * f;
        }
        let gates: [(&[f64], &Matrix, &Matrix); 4] = [
            (&a_u, &self.w_ux, &self.w_uh),
            (&a_i, &self.w_ix, &self.w_ih),
            (&a_f, &self.w_fx, &self.w_fh),
            (&a_o, &self.w_ox, &self.w_oh),
        ];
        for (a, wx, wh) in gates {
            wx.matvec_t_add(a, dx);
            wh.matvec_t_add(a, dh_prev);
        }
        let LstmLayer {
            w_ux,
            w_uh,
            w_ix,
            w_ih,
            w_fx,
            w_fh,
            w_ox,
            w_oh,
            b_u,
            b_i,
            b_f,
            b_o,
        } = grads;
        for (a, gx, gh, gb) in [
            (&a_u, w_ux, w_uh, b_u),
            (&a_i, w_ix, w_ih, b_i),
            (&a_f, w_fx, w_fh, b_f),
            (&a_o, w_ox, w_oh, b_o),
        ] {
            gx.add_outer(1.0, a, &cache.x);
            gh.add_outer(1.0, a, &cache.h_prev);
            axpy(1.0, a, gb.data_mut());
        }
    }
}

impl ParamSet for LstmLayer {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        vec![
            ("w_ux".into(), &self.w_ux),
            ("w_uh".into(), &self.w_uh),
            ("w_ix".into(), &self.w_ix),
            ("w_ih".into(), &self.w_ih),
            ("w_fx".into(), &self.w_fx),
            ("w_fh".into(), &self.w_fh),
            ("w_ox".into(), &self.w_ox),
            ("w_oh".into(), &self.w_oh),
            ("b_u".into(), &self.b_u),
            ("b_i".into(), &self.b_i),
            ("b_f".into(), &self.b_f),
            ("b_o".into(), &self.b_o),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.w_ux,
            &mut self.w_uh,
            &mut self.w_ix,
            &mut self.w_ih,
            &mut self.w_fx,
            &mut self.w_fh,
            &mut self.w_ox,
            &mut self.w_oh,
            &mut self.b_u,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_o,
        ]
    }
}

/// A stack of `L ≥ 1` LSTM layers; layer `l` reads layer `l-1`'s output of
/// the same step and its own state of the predecessor step.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmStack {
    pub layers: Vec<LstmLayer>,
}

/// Cached forward pass of a whole stack for one step.
#[derive(Clone, Debug)]
pub struct StackCache {
    pub cells: Vec<CellCache>,
    /// Dropout masks on the inputs of layers `2..=L` (empty in eval mode).
    pub masks: Vec<Vec<f64>>,
}

impl StackCache {
    pub fn output(&self) -> &[f64] {
        &self.cells.last().expect("stack has layers").h
    }

    pub fn states(&self) -> Vec<LayerState> {
        self.cells
            .iter()
            .map(|c| LayerState {
                h: c.h.clone(),
                c: c.c.clone(),
            })
            .collect()
    }
}

impl LstmStack {
    pub fn zeros(input: usize, hidden: usize, layers: usize) -> Self {
        assert!(layers >= 1, "an LSTM stack needs at least one layer");
        LstmStack {
            layers: (0..layers)
                .map(|l| LstmLayer::zeros(if l == 0 { input } else { hidden }, hidden))
                .collect(),
        }
    }

    pub fn init<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        layers: usize,
        range: f64,
        forget_bias: f64,
        rng: &mut R,
    ) -> Self {
        assert!(layers >= 1, "an LSTM stack needs at least one layer");
        LstmStack {
            layers: (0..layers)
                .map(|l| LstmLayer::init(if l == 0 { input } else { hidden }, hidden, range, forget_bias, rng))
                .collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].hidden_size()
    }

    /// Runs all layers for one step. `masks`, when given, holds one
    /// dropout mask per layer above the first.
    pub fn forward(&self, x: &[f64], prev: &[LayerState], masks: Option<Vec<Vec<f64>>>) -> Result<StackCache> {
        assert_eq!(prev.len(), self.depth(), "one previous state per layer");
        let masks = masks.unwrap_or_default();
        assert!(masks.is_empty() || masks.len() + 1 == self.depth(), "one mask per upper layer");
        let mut cells: Vec<CellCache> = Vec::with_capacity(self.depth());
        for (l, layer) in self.layers.iter().enumerate() {
            let cache = if l == 0 {
                layer.forward(x, &prev[0].h, &prev[0].c)?
            } else {
                let below = &cells[l - 1].h;
                let input: Vec<f64> = match masks.get(l - 1) {
                    Some(m) => below.iter().zip(m).map(|(a, b)| a * b).collect(),
                    None => below.clone(),
                };
                layer.forward(&input, &prev[l].h, &prev[l].c)?
            };
            cells.push(cache);
        }
        Ok(StackCache { cells, masks })
    }

    /// Backward through one step. `own` carries the total gradient on every
    /// layer's output state (recurrent consumers plus, on the top layer,
    /// whatever sits above the stack). Gradients w.r.t. the predecessor's
    /// states are accumulated into `prev`; the input gradient is returned.
    pub fn backward(&self, cache: &StackCache, own: &[StateGrad], grads: &mut LstmStack, prev: &mut [StateGrad]) -> Vec<f64> {
        let depth = self.depth();
        let mut from_above: Option<Vec<f64>> = None;
        let mut dx = Vec::new();
        for l in (0..depth).rev() {
            let layer = &self.layers[l];
            let mut dh = own[l].dh.clone();
            if let Some(v) = &from_above {
                axpy(1.0, v, &mut dh);
            }
            let mut dinput = vec![0.0; layer.input_size()];
            let p = &mut prev[l];
            layer.backward(&cache.cells[l], &dh, &own[l].dc, &mut grads.layers[l], &mut dinput, &mut p.dh, &mut p.dc);
            if l > 0 {
                if let Some(m) = cache.masks.get(l - 1) {
                    dinput.iter_mut().zip(m).for_each(|(g, k)| *g *= k);
                }
                from_above = Some(dinput);
            } else {
                dx = dinput;
            }
        }
        dx
    }
}

impl ParamSet for LstmStack {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, layer)| {
                layer
                    .tensors()
                    .into_iter()
                    .map(move |(name, t)| (format!("layer{}.{}", l + 1, name), t))
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}
