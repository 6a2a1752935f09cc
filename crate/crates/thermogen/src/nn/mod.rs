//! Minimal deterministic neural-network engine: generic f32/f64 tensors,
//! reverse-mode gradients implemented per layer, Adam updates, binary
//! checkpoints.
//!
//! Training uses `forward` (records per-layer caches) followed by `backward`
//! (accumulates parameter gradients); `infer` is the cache-free pure path and
//! produces bit-identical outputs to `forward`, so a shared network can serve
//! concurrent inference while a single owner trains.
//!
//! The scalar type is a compile-time choice: f64 for gradient checking and the
//! small GAN networks, f32 for the large surrogate where memory bandwidth and
//! vector width dominate. Weight initialization draws in f64 and rounds, so
//! both precisions of the same seed start from the same point.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod init;
mod layers;
pub mod loss;
mod tensor;

pub use adam::Adam;
pub use init::Init;
pub use layers::{
    fused_tail_extrema, upconv_extrema, upsample_nearest, Conv2d, Dense, GlobalAvgPool, LeakyRelu,
    Relu, Reshape, SeBlock, SeResBlock, Sigmoid, UpsampleConv,
};
pub(crate) use layers::sigmoid_scalar;
pub use tensor::Tensor;

use crate::error::{Error, Result};
use rand::Rng;

/// Floating-point element type for tensors and layers.
pub trait Scalar:
    num_traits::Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64s(self) -> f64;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64s(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64s(self) -> f64 {
        self as f64
    }
}

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<T: Scalar = f64> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad }
    }
}

/// One differentiable stage. Implementations cache whatever `backward` needs
/// during `forward`; calling `backward` without a preceding `forward` panics.
pub trait Layer<T: Scalar = f64>: Send + Sync {
    fn spec(&self) -> LayerSpec;

    /// Pure forward pass; never touches caches, safe under shared references.
    fn infer(&self, x: &Tensor<T>) -> Tensor<T>;

    /// Recording forward pass for training.
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T>;

    /// Propagates `grad_out` (dL/d output), accumulating parameter gradients
    /// and returning dL/d input.
    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T>;

    fn params(&self) -> Vec<&Param<T>>;

    fn params_mut(&mut self) -> Vec<&mut Param<T>>;
}

/// Serializable layer description; the checkpoint format stores one entry per
/// layer ahead of the flattened parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    Conv2d { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize },
    /// Nearest-neighbor upsampling by `factor` fused with a 3×3, pad-1 conv.
    UpsampleConv { in_ch: usize, out_ch: usize, factor: usize },
    Relu,
    LeakyRelu { slope: f64 },
    Sigmoid,
    /// Squeeze-and-excitation gate.
    SeBlock { channels: usize, reduction: usize },
    /// conv3×3 → relu → conv3×3 → SE → skip add → relu.
    SeResBlock { channels: usize, reduction: usize },
    /// Per-sample reshape (the batch axis is untouched).
    Reshape { shape: Vec<usize> },
    GlobalAvgPool,
}

impl LayerSpec {
    /// Builds a freshly initialized layer matching this description.
    pub fn build<T: Scalar>(&self, rng: &mut impl Rng) -> Box<dyn Layer<T>> {
        match self {
            LayerSpec::Dense { inputs, outputs } => {
                Box::new(Dense::new(*inputs, *outputs, Init::He, rng))
            }
            LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, padding } => {
                Box::new(Conv2d::new(*in_ch, *out_ch, *kernel, *stride, *padding, Init::He, rng))
            }
            LayerSpec::UpsampleConv { in_ch, out_ch, factor } => {
                Box::new(UpsampleConv::new(*in_ch, *out_ch, *factor, Init::He, rng))
            }
            LayerSpec::Relu => Box::new(Relu::new()),
            LayerSpec::LeakyRelu { slope } => Box::new(LeakyRelu::new(*slope)),
            LayerSpec::Sigmoid => Box::new(Sigmoid::new()),
            LayerSpec::SeBlock { channels, reduction } => {
                Box::new(SeBlock::new(*channels, *reduction, rng))
            }
            LayerSpec::SeResBlock { channels, reduction } => {
                Box::new(SeResBlock::new(*channels, *reduction, rng))
            }
            LayerSpec::Reshape { shape } => Box::new(Reshape::new(shape.clone())),
            LayerSpec::GlobalAvgPool => Box::new(GlobalAvgPool::new()),
        }
    }
}

/// A sequential stack of layers.
pub struct Network<T: Scalar = f64> {
    layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Scalar> Network<T> {
    pub fn new(layers: Vec<Box<dyn Layer<T>>>) -> Self {
        Network { layers }
    }

    /// Builds a fresh network from specs, drawing initial weights from `rng`.
    pub fn from_specs(specs: &[LayerSpec], rng: &mut impl Rng) -> Self {
        Network { layers: specs.iter().map(|s| s.build(rng)).collect() }
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec()).collect()
    }

    pub fn layers(&self) -> &[Box<dyn Layer<T>>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Layer<T>>] {
        &mut self.layers
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.infer(&cur);
        }
        cur
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = layer.forward(&cur);
        }
        cur
    }

    /// Backpropagates dL/d output through the stack, returning dL/d input.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let mut cur = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            cur = layer.backward(&cur);
        }
        cur
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(T::zero());
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Copies all parameter values from `other`; shapes must match.
    pub fn load_params_from(&mut self, other: &Network<T>) -> Result<()> {
        let src = other.params();
        let mut dst = self.params_mut();
        if src.len() != dst.len() {
            return Err(Error::Shape(format!(
                "parameter count mismatch: {} vs {}",
                dst.len(),
                src.len()
            )));
        }
        for (d, s) in dst.iter_mut().zip(src) {
            if d.value.shape() != s.value.shape() {
                return Err(Error::Shape(format!(
                    "parameter shape mismatch: {:?} vs {:?}",
                    d.value.shape(),
                    s.value.shape()
                )));
            }
            d.value = s.value.clone();
        }
        Ok(())
    }

    /// Copies parameter values across precisions (e.g. f32 ↔ f64 mirrors).
    pub fn load_params_converted<U: Scalar>(&mut self, other: &Network<U>) -> Result<()> {
        let src = other.params();
        let mut dst = self.params_mut();
        if src.len() != dst.len() {
            return Err(Error::Shape(format!(
                "parameter count mismatch: {} vs {}",
                dst.len(),
                src.len()
            )));
        }
        for (d, s) in dst.iter_mut().zip(src) {
            if d.value.shape() != s.value.shape() {
                return Err(Error::Shape(format!(
                    "parameter shape mismatch: {:?} vs {:?}",
                    d.value.shape(),
                    s.value.shape()
                )));
            }
            for (dv, sv) in d.value.data_mut().iter_mut().zip(s.value.data()) {
                *dv = T::from_f64(sv.to_f64s());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::tagged;

    #[test]
    fn infer_matches_forward_exactly() {
        let mut rng = tagged(21, "nn-test");
        let specs = vec![
            LayerSpec::Conv2d { in_ch: 2, out_ch: 3, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::Relu,
            LayerSpec::UpsampleConv { in_ch: 3, out_ch: 2, factor: 2 },
            LayerSpec::SeBlock { channels: 2, reduction: 2 },
            LayerSpec::Reshape { shape: vec![2 * 8 * 8] },
            LayerSpec::Dense { inputs: 128, outputs: 5 },
            LayerSpec::Sigmoid,
        ];
        let mut net: Network = Network::from_specs(&specs, &mut rng);
        let x = Tensor::from_vec(
            &[2, 2, 4, 4],
            (0..64).map(|i| (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        let a = net.infer(&x);
        let b = net.forward(&x);
        assert_eq!(a, b);
    }

    #[test]
    fn specs_roundtrip_through_build() {
        let mut rng = tagged(22, "nn-test");
        let specs = vec![
            LayerSpec::Dense { inputs: 4, outputs: 7 },
            LayerSpec::LeakyRelu { slope: 0.2 },
            LayerSpec::Reshape { shape: vec![7] },
        ];
        let net: Network = Network::from_specs(&specs, &mut rng);
        assert_eq!(net.specs(), specs);
    }

    #[test]
    fn zero_grads_clears_accumulation() {
        let mut rng = tagged(23, "nn-test");
        let mut net: Network =
            Network::from_specs(&[LayerSpec::Dense { inputs: 3, outputs: 2 }], &mut rng);
        let x = Tensor::from_vec(&[1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        let y = net.forward(&x);
        let g = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
        net.backward(&g);
        assert!(net.params().iter().any(|p| p.grad.sq_norm() > 0.0));
        net.zero_grads();
        assert!(net.params().iter().all(|p| p.grad.sq_norm() == 0.0));
        let _ = y;
    }

    #[test]
    fn load_params_from_enforces_shapes() {
        let mut rng = tagged(24, "nn-test");
        let a: Network = Network::from_specs(&[LayerSpec::Dense { inputs: 3, outputs: 2 }], &mut rng);
        let mut b: Network =
            Network::from_specs(&[LayerSpec::Dense { inputs: 3, outputs: 2 }], &mut rng);
        let mut c: Network =
            Network::from_specs(&[LayerSpec::Dense { inputs: 4, outputs: 2 }], &mut rng);
        b.load_params_from(&a).unwrap();
        let x = Tensor::from_vec(&[1, 3], vec![0.2, 0.4, -0.6]).unwrap();
        assert_eq!(a.infer(&x), b.infer(&x));
        assert!(c.load_params_from(&a).is_err());
    }

    #[test]
    fn f32_network_tracks_f64_reference() {
        let mut rng64 = tagged(25, "nn-test");
        let mut rng32 = tagged(25, "nn-test");
        let specs = vec![
            LayerSpec::Conv2d { in_ch: 1, out_ch: 4, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::Relu,
            LayerSpec::UpsampleConv { in_ch: 4, out_ch: 2, factor: 2 },
            LayerSpec::SeResBlock { channels: 2, reduction: 2 },
        ];
        let net64: Network<f64> = Network::from_specs(&specs, &mut rng64);
        let net32: Network<f32> = Network::from_specs(&specs, &mut rng32);
        let x64 = Tensor::<f64>::from_vec(
            &[2, 1, 5, 5],
            (0..50).map(|i| (i as f64 * 0.31).cos()).collect(),
        )
        .unwrap();
        let x32 = Tensor::<f32>::from_vec(
            &[2, 1, 5, 5],
            (0..50).map(|i| (i as f64 * 0.31).cos() as f32).collect(),
        )
        .unwrap();
        let y64 = net64.infer(&x64);
        let y32 = net32.infer(&x32);
        assert_eq!(y64.shape(), y32.shape());
        for (&a, &b) in y64.data().iter().zip(y32.data()) {
            assert!((a - b as f64).abs() < 1e-4, "f32/f64 divergence: {a} vs {b}");
        }
    }
}
