use rand::Rng;

use super::matrix::{axpy, dot, Matrix};
use super::ops::{log_sigmoid, sigmoid};
use super::ParamSet;

/// Binary classifier: affine → rectifier → affine → logistic.
#[derive(Clone, Debug, PartialEq)]
pub struct RectifierClassifier {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

pub const DEFAULT_HIDDEN: usize = 300;

#[derive(Clone, Debug)]
pub struct ClassifierCache {
    x: Vec<f64>,
    hidden: Vec<f64>,
    pub logit: f64,
}

impl ClassifierCache {
    pub fn prob(&self) -> f64 {
        sigmoid(self.logit)
    }
}

impl RectifierClassifier {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        RectifierClassifier {
            w1: Matrix::zeros(hidden, input),
            b1: Matrix::zeros(hidden, 1),
            w2: Matrix::zeros(1, hidden),
            b2: Matrix::zeros(1, 1),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let r1 = (6.0 / (input + hidden) as f64).sqrt();
        let r2 = (6.0 / (hidden + 1) as f64).sqrt();
        RectifierClassifier {
            w1: Matrix::uniform(hidden, input, r1, rng),
            b1: Matrix::zeros(hidden, 1),
            w2: Matrix::uniform(1, hidden, r2, rng),
            b2: Matrix::zeros(1, 1),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w1.cols()
    }

    pub fn forward(&self, x: &[f64]) -> ClassifierCache {
        let mut hidden = self.b1.data().to_vec();
        self.w1.matvec_add(x, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.max(0.0));
        let logit = dot(self.w2.row(0), &hidden) + self.b2.get(0, 0);
        ClassifierCache {
            x: x.to_vec(),
            hidden,
            logit,
        }
    }

    /// Probability of the positive class.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.forward(x).prob()
    }

    /// Logistic loss `−[y ln p + (1−y) ln(1−p)]`.
    pub fn loss(&self, x: &[f64], label: bool) -> f64 {
        let z = self.forward(x).logit;
        if label {
            -log_sigmoid(z)
        } else {
            -log_sigmoid(-z)
        }
    }

    /// Accumulates `scale · ∂loss/∂θ` into `grads`; returns the loss.
    pub fn backward(&self, cache: &ClassifierCache, label: bool, scale: f64, grads: &mut RectifierClassifier) -> f64 {
        let y = if label { 1.0 } else { 0.0 };
        let dz = scale * (cache.prob() - y);
        grads.b2.data_mut()[0] += dz;
        axpy(dz, &cache.hidden, grads.w2.row_mut(0));
        let dh: Vec<f64> = self
            .w2
            .row(0)
            .iter()
            .zip(&cache.hidden)
            .map(|(w, h)| if *h > 0.0 { dz * w } else { 0.0 })
            .collect();
        grads.w1.add_outer(1.0, &dh, &cache.x);
        axpy(1.0, &dh, grads.b1.data_mut());
        if label {
            -log_sigmoid(cache.logit)
        } else {
            -log_sigmoid(-cache.logit)
        }
    }
}

impl ParamSet for RectifierClassifier {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        vec![
            ("w1".into(), &self.w1),
            ("b1".into(), &self.b1),
            ("w2".into(), &self.w2),
            ("b2".into(), &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::gradcheck::{grad_check, Coordinates};
    use crate::nncore::optim::AdaGrad;
    use crate::nncore::zeros_like;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut clf = RectifierClassifier::init(6, 12, &mut rng);
        clf.b1.data_mut().iter_mut().for_each(|b| *b = 0.05);
        let data: Vec<(Vec<f64>, bool)> = (0..8)
            .map(|i| ((0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(), i % 3 == 0))
            .collect();
        let mut grads = zeros_like(&clf);
        for (x, y) in &data {
            let cache = clf.forward(x);
            clf.backward(&cache, *y, 1.0, &mut grads);
        }
        let loss = |c: &RectifierClassifier| data.iter().map(|(x, y)| c.loss(x, *y)).sum::<f64>();
        let report = grad_check(&mut clf, &grads, loss, 1e-5, Coordinates::All);
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn separable_toy_is_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data: Vec<(Vec<f64>, bool)> = (0..40)
            .map(|_| {
                let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let y = x[0] + 0.5 * x[2] > 0.0;
                (x, y)
            })
            .collect();
        let mut clf = RectifierClassifier::init(4, 16, &mut rng);
        let mut opt = AdaGrad::new(0.05);
        for _ in 0..400 {
            let mut grads = zeros_like(&clf);
            for (x, y) in &data {
                let cache = clf.forward(x);
                clf.backward(&cache, *y, 1.0 / data.len() as f64, &mut grads);
            }
            opt.step(&mut clf, &grads).unwrap();
        }
        for (x, y) in &data {
            let p = clf.predict(x);
            assert!(p > 0.0 && p < 1.0);
            assert_eq!(p > 0.5, *y);
        }
    }
}
