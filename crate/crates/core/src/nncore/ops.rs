use rand::Rng;

use super::ParamSet;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Log-probabilities of a softmax over `logits`.
pub fn softmax_log_prob(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|x| x - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    softmax_log_prob(logits).into_iter().map(f64::exp).collect()
}

/// Inverted-dropout mask: each unit is kept with probability `1 - rate`
/// and scaled by `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    if rate == 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

pub fn global_norm<P: ParamSet + ?Sized>(grads: &P) -> f64 {
    grads
        .tensors()
        .iter()
        .map(|(_, t)| t.sq_norm())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` to norm `threshold` when their global norm exceeds it.
/// Returns the norm before clipping.
pub fn clip_gradients<P: ParamSet + ?Sized>(grads: &mut P, threshold: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > threshold {
        let mut s = threshold / norm;
        loop {
            for t in grads.tensors_mut() {
                t.scale(s);
            }
            // Rounding can leave the result an ulp above the threshold.
            if global_norm(grads) <= threshold {
                break;
            }
            s = 1.0 - f64::EPSILON;
        }
    }
    norm
}
