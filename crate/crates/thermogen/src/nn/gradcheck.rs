//! Central-difference verification of layer gradients.
//!
//! The check drives a layer (or a whole network) with the projection loss
//! `L = Σ r ⊙ y` for a fixed random `r`, so `dL/dy = r` exactly, then compares
//! every analytic gradient against `(L(θ+ε) - L(θ-ε)) / 2ε` on a sampled set
//! of coordinates.

use rand::Rng;

use super::tensor::Tensor;
use super::{Layer, Network};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub coordinates_checked: usize,
}

fn projection(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn pick_coords(len: usize, want: usize, rng: &mut impl Rng) -> Vec<usize> {
    if len <= want {
        (0..len).collect()
    } else {
        rand::seq::index::sample(rng, len, want).into_vec()
    }
}

fn update(report: &mut GradCheckReport, analytic: f64, numeric: f64) {
    let abs = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs()).max(1e-3);
    report.max_abs_err = report.max_abs_err.max(abs);
    report.max_rel_err = report.max_rel_err.max(abs / scale);
    report.coordinates_checked += 1;
}

/// Checks one layer's parameter and input gradients. `samples_per_tensor`
/// bounds how many coordinates of each tensor are compared. Checks run in
/// f64: central differences need more mantissa than f32 offers.
pub fn check_layer<L: Layer<f64> + ?Sized>(
    layer: &mut L,
    input: &Tensor,
    samples_per_tensor: usize,
    eps: f64,
    rng: &mut impl Rng,
) -> GradCheckReport {
    for p in layer.params_mut() {
        p.grad.fill(0.0);
    }
    let y = layer.forward(input);
    let mut r = Tensor::zeros(y.shape());
    for v in r.data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let dinput = layer.backward(&r);
    let param_grads: Vec<Tensor> = layer.params().iter().map(|p| p.grad.clone()).collect();

    let mut report =
        GradCheckReport { max_abs_err: 0.0, max_rel_err: 0.0, coordinates_checked: 0 };

    for t in 0..param_grads.len() {
        let len = param_grads[t].len();
        for i in pick_coords(len, samples_per_tensor, rng) {
            let orig = layer.params()[t].value.data()[i];
            layer.params_mut()[t].value.data_mut()[i] = orig + eps;
            let lp = projection(&layer.infer(input), &r);
            layer.params_mut()[t].value.data_mut()[i] = orig - eps;
            let lm = projection(&layer.infer(input), &r);
            layer.params_mut()[t].value.data_mut()[i] = orig;
            update(&mut report, param_grads[t].data()[i], (lp - lm) / (2.0 * eps));
        }
    }
    for i in pick_coords(input.len(), samples_per_tensor, rng) {
        let mut x = input.clone();
        x.data_mut()[i] += eps;
        let lp = projection(&layer.infer(&x), &r);
        x.data_mut()[i] = input.data()[i] - eps;
        let lm = projection(&layer.infer(&x), &r);
        update(&mut report, dinput.data()[i], (lp - lm) / (2.0 * eps));
    }
    report
}

/// Same check through a whole sequential network.
pub fn check_network(
    net: &mut Network,
    input: &Tensor,
    samples_per_tensor: usize,
    eps: f64,
    rng: &mut impl Rng,
) -> GradCheckReport {
    net.zero_grads();
    let y = net.forward(input);
    let mut r = Tensor::zeros(y.shape());
    for v in r.data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let dinput = net.backward(&r);
    let param_grads: Vec<Tensor> = net.params().iter().map(|p| p.grad.clone()).collect();

    let mut report =
        GradCheckReport { max_abs_err: 0.0, max_rel_err: 0.0, coordinates_checked: 0 };

    for t in 0..param_grads.len() {
        let len = param_grads[t].len();
        for i in pick_coords(len, samples_per_tensor, rng) {
            let orig = net.params()[t].value.data()[i];
            net.params_mut()[t].value.data_mut()[i] = orig + eps;
            let lp = projection(&net.infer(input), &r);
            net.params_mut()[t].value.data_mut()[i] = orig - eps;
            let lm = projection(&net.infer(input), &r);
            net.params_mut()[t].value.data_mut()[i] = orig;
            update(&mut report, param_grads[t].data()[i], (lp - lm) / (2.0 * eps));
        }
    }
    for i in pick_coords(input.len(), samples_per_tensor, rng) {
        let mut x = input.clone();
        x.data_mut()[i] += eps;
        let lp = projection(&net.infer(&x), &r);
        x.data_mut()[i] = input.data()[i] - eps;
        let lm = projection(&net.infer(&x), &r);
        update(&mut report, dinput.data()[i], (lp - lm) / (2.0 * eps));
    }
    report
}
