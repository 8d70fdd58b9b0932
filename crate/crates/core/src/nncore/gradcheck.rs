use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ParamSet;

/// Which coordinates of each tensor to probe.
#[derive(Clone, Copy, Debug)]
pub enum Coordinates {
    All,
    /// At most `per_tensor` coordinates per tensor, chosen with `seed`.
    Sample { per_tensor: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct Mismatch {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// One probed coordinate.
#[derive(Clone, Copy, Debug)]
pub struct Probe {
    /// Position of the tensor in [`ParamSet::tensors`] order.
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn rel_error(&self) -> f64 {
        relative_error(self.analytic, self.numeric)
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub per_tensor: Vec<TensorCheck>,
    pub worst: Option<Mismatch>,
    /// Every probe, in probing order.
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }

    /// Merges another report, keeping the per-tensor maxima.
    pub fn merge(&mut self, other: GradCheckReport) {
        for t in other.per_tensor {
            match self.per_tensor.iter_mut().find(|s| s.name == t.name) {
                Some(s) => {
                    s.checked += t.checked;
                    s.max_rel_error = s.max_rel_error.max(t.max_rel_error);
                }
                None => self.per_tensor.push(t),
            }
        }
        self.probes.extend(other.probes);
        if other.max_rel_error > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
            if other.worst.is_some() {
                self.worst = other.worst;
            }
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` gradients against central differences
/// `(f(p+ε) − f(p−ε)) / 2ε` of `loss`. Each probed coordinate is restored
/// to its exact original value afterwards.
pub fn grad_check<P, F>(params: &mut P, analytic: &P, mut loss: F, eps: f64, coords: Coordinates) -> GradCheckReport
where
    P: ParamSet + ?Sized,
    F: FnMut(&P) -> f64,
{
    let shapes: Vec<(String, usize)> = params.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|(_, t)| t.data().to_vec()).collect();
    assert_eq!(shapes.len(), grads.len(), "parameter and gradient sets differ");

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_tensor: Vec::with_capacity(shapes.len()),
        worst: None,
        probes: Vec::new(),
    };
    let mut rng = match coords {
        Coordinates::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Coordinates::All => None,
    };
    for (ti, (name, len)) in shapes.iter().enumerate() {
        assert_eq!(grads[ti].len(), *len, "gradient shape for {name}");
        let indices: Vec<usize> = match (&coords, rng.as_mut()) {
            (Coordinates::Sample { per_tensor, .. }, Some(r)) if *per_tensor < *len => {
                let mut v = sample(r, *len, *per_tensor).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..*len).collect(),
        };
        let mut worst_here = 0.0f64;
        for &k in &indices {
            let original = params.tensors_mut()[ti].data()[k];
            params.tensors_mut()[ti].data_mut()[k] = original + eps;
            let plus = loss(params);
            params.tensors_mut()[ti].data_mut()[k] = original - eps;
            let minus = loss(params);
            params.tensors_mut()[ti].data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads[ti][k];
            let err = relative_error(analytic, numeric);
            report.probes.push(Probe {
                tensor: ti,
                index: k,
                analytic,
                numeric,
            });
            worst_here = worst_here.max(err);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(Mismatch {
                    tensor: name.clone(),
                    index: k,
                    analytic,
                    numeric,
                });
            }
        }
        report.per_tensor.push(TensorCheck {
            name: name.clone(),
            checked: indices.len(),
            max_rel_error: worst_here,
        });
    }
    report
}

/// Sixth-order central difference with step `h`. With `h = 1e-2` its
/// round-off is roughly 1000× below that of a two-point difference at
/// `1e-5`, which matters for coordinates whose gradient is near zero.
pub fn stencil_derivative<P, F>(params: &mut P, tensor: usize, index: usize, loss: &mut F, h: f64) -> f64
where
    P: ParamSet + ?Sized,
    F: FnMut(&P) -> f64,
{
    let original = params.tensors_mut()[tensor].data()[index];
    let mut at = |d: f64| {
        params.tensors_mut()[tensor].data_mut()[index] = original + d;
        loss(params)
    };
    let value = (45.0 * (at(h) - at(-h)) - 9.0 * (at(2.0 * h) - at(-2.0 * h)) + (at(3.0 * h) - at(-3.0 * h))) / (60.0 * h);
    params.tensors_mut()[tensor].data_mut()[index] = original;
    value
}

/// Re-evaluates every probe at or above `tolerance` with
/// [`stencil_derivative`] (`h = 1e-2`) and recomputes the report's maxima.
/// Returns the number of re-evaluated probes.
pub fn refine_probes<P, F>(report: &mut GradCheckReport, params: &mut P, mut loss: F, tolerance: f64) -> usize
where
    P: ParamSet + ?Sized,
    F: FnMut(&P) -> f64,
{
    let mut rechecked = 0;
    for probe in &mut report.probes {
        if probe.rel_error() >= tolerance {
            probe.numeric = stencil_derivative(params, probe.tensor, probe.index, &mut loss, 1e-2);
            rechecked += 1;
        }
    }
    let names: Vec<String> = report.per_tensor.iter().map(|t| t.name.clone()).collect();
    report.max_rel_error = 0.0;
    report.worst = None;
    for t in &mut report.per_tensor {
        t.max_rel_error = 0.0;
    }
    for probe in &report.probes {
        let err = probe.rel_error();
        let t = &mut report.per_tensor[probe.tensor];
        t.max_rel_error = t.max_rel_error.max(err);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some(Mismatch {
                tensor: names[probe.tensor].clone(),
                index: probe.index,
                analytic: probe.analytic,
                numeric: probe.numeric,
            });
        }
    }
    rechecked
}
