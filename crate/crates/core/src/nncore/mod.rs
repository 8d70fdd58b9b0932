//! Minimal numeric layer: dense matrices, the deep LSTM cell, softmax,
//! dropout, a rectifier classifier, optimisers, gradient clipping and
//! finite-difference checking. Everything is `f64`.

mod classifier;
pub mod gradcheck;
mod lstm;
mod matrix;
mod ops;
mod optim;

pub use classifier::{ClassifierCache, RectifierClassifier, DEFAULT_HIDDEN};
pub use gradcheck::{
    grad_check, refine_probes, relative_error, stencil_derivative, Coordinates, GradCheckReport, Probe,
};
pub use lstm::{CellCache, LayerState, LstmLayer, LstmStack, StackCache, StateGrad};
pub use matrix::{axpy, dot, Matrix};
pub use ops::{
    clip_gradients, dropout_mask, global_norm, log_sigmoid, log_sum_exp, sigmoid, softmax, softmax_log_prob,
};
pub use optim::{sgd_step, AdaGrad};

/// A named, ordered collection of parameter tensors.
///
/// `tensors` and `tensors_mut` must enumerate the same tensors in the same
/// order; gradients are stored in a value of the same type.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(String, &Matrix)>;
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// A copy of `params` with every entry set to zero.
pub fn zeros_like<P: ParamSet + Clone>(params: &P) -> P {
    let mut z = params.clone();
    for t in z.tensors_mut() {
        t.fill(0.0);
    }
    z
}

/// `acc += alpha · other`, tensor by tensor.
pub fn accumulate<P: ParamSet + ?Sized>(acc: &mut P, alpha: f64, other: &P) {
    let os = other.tensors();
    for (a, (_, o)) in acc.tensors_mut().into_iter().zip(&os) {
        a.axpy(alpha, o);
    }
}

/// Flattened copy of every tensor, in enumeration order.
pub fn flatten<P: ParamSet + ?Sized>(params: &P) -> Vec<f64> {
    params.tensors().iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
}
