//! Layer primitives with hand-derived backward passes.
//!
//! Layers own their parameters ([`Param`]: value + gradient accumulator) and
//! expose `forward` plus a `backward` that consumes the upstream gradient,
//! accumulates parameter gradients, and returns the input gradient. There is
//! no tape; composite modules chain these calls explicitly in reverse order
//! of their forward pass.
//!
//! Parameter traversal goes through [`ParamOwner::visit_params`], which every
//! module implements by recursing into its children in a fixed order. The
//! optimizer, serializer, and gradient-norm clipping are all written against
//! that single visitor.

pub mod act;
pub mod attention;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod pool;
pub mod resize;
pub mod shuffle;

pub use act::{gelu, gelu_backward, leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward};
pub use attention::{Axis, AxisAttention, AxisAttentionCache};
pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::LayerNorm2d;
pub use pool::{adaptive_avg_pool, adaptive_avg_pool_backward, global_avg_pool, global_avg_pool_backward};
pub use resize::{bilinear_resize, bilinear_resize_backward};
pub use shuffle::{pixel_shuffle, pixel_shuffle_backward};

use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::Tensor;
use alloc::string::String;
use alloc::vec::Vec;

/// A learnable tensor and its gradient accumulator.
///
/// The name is globally unique within a model (enforced when collecting into
/// a parameter store) and doubles as the seed label for initialization, so a
/// parameter's initial value depends only on `(init_seed, name)` — never on
/// construction order.
#[derive(Debug, Clone)]
pub struct Param<F> {
    pub name: String,
    pub v: Tensor<F>,
    pub g: Tensor<F>,
}

impl<F: Real> Param<F> {
    pub fn new(name: String, v: Tensor<F>) -> Self {
        let g = v.zeros_like();
        Param { name, v, g }
    }

    pub fn zero_grad(&mut self) {
        self.g.fill(F::ZERO);
    }
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// All zeros. Used where a block must start as an exact identity.
    Zero,
    /// Uniform in ±1/sqrt(fan_in), the usual default for conv/linear weights.
    FanInUniform,
}

/// Draw initial weights for a parameter from its own labeled RNG stream.
pub fn init_tensor<F: Real>(
    name: &str,
    shape: (usize, usize, usize, usize),
    fan_in: usize,
    init: Init,
    seed: u64,
) -> Tensor<F> {
    let (n, c, h, w) = shape;
    let mut t = Tensor::zeros(n, c, h, w);
    match init {
        Init::Zero => {}
        Init::FanInUniform => {
            let mut rng = Rng::from_label(seed, name);
            let limit = 1.0 / libm::sqrt(fan_in.max(1) as f64);
            for v in t.data_mut() {
                *v = rng.uniform_symmetric(limit);
            }
        }
    }
    t
}

/// Implemented by every module that owns parameters (directly or through
/// children). Traversal order is fixed by each implementation.
pub trait ParamOwner<F: Real> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>));
}

/// Zero every gradient accumulator in the module tree.
pub fn zero_grads<F: Real>(m: &mut dyn ParamOwner<F>) {
    m.visit_params(&mut |p| p.zero_grad());
}

/// Total number of scalar parameters.
pub fn param_count<F: Real>(m: &mut dyn ParamOwner<F>) -> usize {
    let mut n = 0;
    m.visit_params(&mut |p| n += p.v.numel());
    n
}

/// Global L2 norm over all gradients, accumulated in f64 in visit order.
pub fn global_grad_norm<F: Real>(m: &mut dyn ParamOwner<F>) -> f64 {
    let mut acc = 0.0;
    m.visit_params(&mut |p| acc += p.g.sq_sum_f64());
    libm::sqrt(acc)
}

/// Scale every gradient by `s` (used by global-norm clipping).
pub fn scale_grads<F: Real>(m: &mut dyn ParamOwner<F>, s: F) {
    m.visit_params(&mut |p| p.g.scale(s));
}

/// Snapshot `(name, shape, values)` for every parameter, in visit order.
pub fn collect_params<F: Real>(
    m: &mut dyn ParamOwner<F>,
) -> Vec<(String, Tensor<F>)> {
    let mut out = Vec::new();
    m.visit_params(&mut |p| out.push((p.name.clone(), p.v.clone())));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_order_independent_and_seeded() {
        let a: Tensor<f64> = init_tensor("m.w", (2, 3, 3, 3), 27, Init::FanInUniform, 5);
        let b: Tensor<f64> = init_tensor("m.w", (2, 3, 3, 3), 27, Init::FanInUniform, 5);
        let c: Tensor<f64> = init_tensor("m.w", (2, 3, 3, 3), 27, Init::FanInUniform, 6);
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
        let limit = 1.0 / (27f64).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= limit));
        assert!(a.data().iter().any(|v| *v != 0.0));
    }
}
