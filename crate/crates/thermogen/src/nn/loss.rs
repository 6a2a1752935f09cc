//! Mean-reduced losses returning the scalar (accumulated in f64) and the
//! gradient w.r.t. the prediction.

use super::tensor::Tensor;
use super::Scalar;

/// Mean squared error over every element.
pub fn mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> (f64, Tensor<T>) {
    assert_eq!(pred.shape(), target.shape(), "mse shape mismatch");
    let n = pred.len() as f64;
    let scale = T::from_f64(2.0 / n);
    let mut grad = Tensor::zeros(pred.shape());
    let g = grad.data_mut();
    let mut loss = 0.0;
    for i in 0..pred.len() {
        let d = pred.data()[i] - target.data()[i];
        loss += (d * d).to_f64s();
        g[i] = scale * d;
    }
    (loss / n, grad)
}

const BCE_EPS: f64 = 1e-7;

/// Binary cross-entropy with predictions clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> (f64, Tensor<T>) {
    assert_eq!(pred.shape(), target.shape(), "bce shape mismatch");
    let n = pred.len() as f64;
    let lo = T::from_f64(BCE_EPS);
    let hi = T::from_f64(1.0 - BCE_EPS);
    let inv_n = T::from_f64(1.0 / n);
    let mut grad = Tensor::zeros(pred.shape());
    let g = grad.data_mut();
    let mut loss = 0.0;
    for i in 0..pred.len() {
        let p = num_traits::clamp(pred.data()[i], lo, hi);
        let t = target.data()[i];
        loss -= (t * p.ln() + (T::one() - t) * (T::one() - p).ln()).to_f64s();
        g[i] = (-t / p + (T::one() - t) / (T::one() - p)) * inv_n;
    }
    (loss / n, grad)
}
