//! Adam optimizer. Moment state is matched to parameters positionally, in the
//! network's declaration order, which is also the order checkpoints use.

use super::{Param, Scalar};

#[derive(Debug, Clone)]
pub struct Adam<T: Scalar = f64> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients currently stored in `params`.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
            self.v = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer bound to a different parameter set");
        self.t += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let c1 = T::from_f64(1.0 - self.beta1);
        let c2 = T::from_f64(1.0 - self.beta2);
        let lr_bc = T::from_f64(self.lr / (1.0 - self.beta1.powi(self.t as i32)));
        let inv_bc2 = T::from_f64(1.0 / (1.0 - self.beta2.powi(self.t as i32)));
        let eps = T::from_f64(self.eps);
        for (slot, p) in params.iter_mut().enumerate() {
            assert_eq!(self.m[slot].len(), p.value.len(), "parameter {slot} changed shape");
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            let g = p.grad.data();
            let w = p.value.data_mut();
            for i in 0..w.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + c1 * gi;
                v[i] = b2 * v[i] + c2 * gi * gi;
                let vh = v[i] * inv_bc2;
                w[i] -= lr_bc * m[i] / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::tensor::Tensor;
    use super::*;

    fn scalar_param(value: f64, grad: f64) -> Param {
        Param {
            value: Tensor::from_vec(&[1], vec![value]).unwrap(),
            grad: Tensor::from_vec(&[1], vec![grad]).unwrap(),
        }
    }

    /// With constant unit gradient the first step moves by almost exactly
    /// `-lr` (bias correction makes m̂ = ĝ = 1).
    #[test]
    fn first_step_magnitude_is_lr() {
        let mut p = scalar_param(0.0, 1.0);
        let mut adam = Adam::new(1e-3);
        adam.step(&mut [&mut p]);
        let got = p.value.data()[0];
        assert!((got + 1e-3).abs() < 1e-9, "first step gave {got}");
    }

    #[test]
    fn constant_gradient_keeps_unit_scale_steps() {
        let mut p = scalar_param(0.0, 1.0);
        let mut adam = Adam::new(1e-3);
        for _ in 0..10 {
            p.grad.data_mut()[0] = 1.0;
            adam.step(&mut [&mut p]);
        }
        let got = p.value.data()[0];
        assert!((got + 10.0e-3).abs() < 1e-6, "ten unit-gradient steps gave {got}");
    }

    #[test]
    fn descends_a_quadratic() {
        // f(x) = (x - 3)², df = 2(x - 3)
        let mut p = scalar_param(0.0, 0.0);
        let mut adam = Adam::new(0.05);
        for _ in 0..600 {
            let x = p.value.data()[0];
            p.grad.data_mut()[0] = 2.0 * (x - 3.0);
            adam.step(&mut [&mut p]);
        }
        let x = p.value.data()[0];
        assert!((x - 3.0).abs() < 1e-2, "converged to {x}");
    }

    #[test]
    fn f32_steps_track_f64_steps() {
        let mut p64 = scalar_param(0.2, 0.0);
        let mut p32 = Param::<f32> {
            value: Tensor::from_vec(&[1], vec![0.2f32]).unwrap(),
            grad: Tensor::from_vec(&[1], vec![0.0f32]).unwrap(),
        };
        let mut a64 = Adam::<f64>::new(0.01);
        let mut a32 = Adam::<f32>::new(0.01);
        for _ in 0..50 {
            let x = p64.value.data()[0];
            p64.grad.data_mut()[0] = 2.0 * (x - 1.0);
            a64.step(&mut [&mut p64]);
            let x = p32.value.data()[0];
            p32.grad.data_mut()[0] = 2.0 * (x - 1.0);
            a32.step(&mut [&mut p32]);
        }
        let diff = (p64.value.data()[0] - p32.value.data()[0] as f64).abs();
        assert!(diff < 1e-4, "precisions diverged by {diff}");
    }
}
