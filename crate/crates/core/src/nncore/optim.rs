use super::ParamSet;
use crate::error::{Error, Result};

fn check_finite<P: ParamSet + ?Sized>(params: &P, what: &str) -> Result<()> {
    for (name, t) in params.tensors() {
        if !t.is_finite() {
            return Err(Error::Numeric(format!("{what} left non-finite values in {name}")));
        }
    }
    Ok(())
}

/// Plain SGD: `p ← p − lr·g`.
pub fn sgd_step<P: ParamSet + ?Sized>(params: &mut P, grads: &P, lr: f64) -> Result<()> {
    let gs = grads.tensors();
    let mut ps = params.tensors_mut();
    assert_eq!(ps.len(), gs.len(), "parameter and gradient sets differ");
    for (p, (_, g)) in ps.iter_mut().zip(&gs) {
        p.axpy(-lr, g);
    }
    drop(ps);
    check_finite(params, "SGD update")
}

/// AdaGrad with per-coordinate squared-gradient accumulators:
/// `acc += g²; p ← p − lr·g / (√acc + ε)`.
#[derive(Clone, Debug)]
pub struct AdaGrad {
    pub lr: f64,
    pub eps: f64,
    acc: Vec<Vec<f64>>,
}

impl AdaGrad {
    pub fn new(lr: f64) -> Self {
        AdaGrad {
            lr,
            eps: 1e-8,
            acc: Vec::new(),
        }
    }

    pub fn step<P: ParamSet + ?Sized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let gs = grads.tensors();
        if self.acc.is_empty() {
            self.acc = gs.iter().map(|(_, g)| vec![0.0; g.len()]).collect();
        }
        let mut ps = params.tensors_mut();
        assert_eq!(ps.len(), gs.len(), "parameter and gradient sets differ");
        for ((p, (_, g)), acc) in ps.iter_mut().zip(&gs).zip(&mut self.acc) {
            for ((pv, &gv), a) in p.data_mut().iter_mut().zip(g.data()).zip(acc.iter_mut()) {
                *a += gv * gv;
                *pv -= self.lr * gv / (a.sqrt() + self.eps);
            }
        }
        drop(ps);
        check_finite(params, "AdaGrad update")
    }
}
