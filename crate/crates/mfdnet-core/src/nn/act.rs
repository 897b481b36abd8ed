//! Elementwise activations as pure functions (forward + backward pairs).
//!
//! GELU uses the exact formulation `x * Phi(x)` with the normal CDF computed
//! through `erf`, not the tanh approximation; its derivative is
//! `Phi(x) + x * phi(x)`.

use crate::scalar::{phi, phi_pdf, Real};
use crate::tensor::Tensor;

pub fn gelu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| v * phi(v))
}

pub fn gelu_backward<F: Real>(x: &Tensor<F>, gy: &Tensor<F>) -> Tensor<F> {
    debug_assert_eq!(x.shape(), gy.shape());
    let mut gx = x.zeros_like();
    for ((g, &xv), &gv) in gx.data_mut().iter_mut().zip(x.data()).zip(gy.data()) {
        *g = gv * (phi(xv) + xv * phi_pdf(xv));
    }
    gx
}

pub fn leaky_relu<F: Real>(x: &Tensor<F>, slope: F) -> Tensor<F> {
    x.map(|v| if v > F::ZERO { v } else { slope * v })
}

pub fn leaky_relu_backward<F: Real>(x: &Tensor<F>, gy: &Tensor<F>, slope: F) -> Tensor<F> {
    debug_assert_eq!(x.shape(), gy.shape());
    let mut gx = x.zeros_like();
    for ((g, &xv), &gv) in gx.data_mut().iter_mut().zip(x.data()).zip(gy.data()) {
        *g = if xv > F::ZERO { gv } else { slope * gv };
    }
    gx
}

pub fn relu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| v.max(F::ZERO))
}

pub fn relu_backward<F: Real>(x: &Tensor<F>, gy: &Tensor<F>) -> Tensor<F> {
    debug_assert_eq!(x.shape(), gy.shape());
    let mut gx = x.zeros_like();
    for ((g, &xv), &gv) in gx.data_mut().iter_mut().zip(x.data()).zip(gy.data()) {
        *g = if xv > F::ZERO { gv } else { F::ZERO };
    }
    gx
}

#[inline]
pub fn sigmoid_scalar<F: Real>(v: F) -> F {
    F::ONE / (F::ONE + (-v).exp())
}

pub fn sigmoid<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(sigmoid_scalar)
}

/// Backward from the *output* value: d sigmoid = y (1 - y).
pub fn sigmoid_backward<F: Real>(y: &Tensor<F>, gy: &Tensor<F>) -> Tensor<F> {
    debug_assert_eq!(y.shape(), gy.shape());
    let mut gx = y.zeros_like();
    for ((g, &yv), &gv) in gx.data_mut().iter_mut().zip(y.data()).zip(gy.data()) {
        *g = gv * yv * (F::ONE - yv);
    }
    gx
}

pub fn tanh_act<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| v.tanh())
}

/// Backward from the *output* value: d tanh = 1 - y^2.
pub fn tanh_backward<F: Real>(y: &Tensor<F>, gy: &Tensor<F>) -> Tensor<F> {
    debug_assert_eq!(y.shape(), gy.shape());
    let mut gx = y.zeros_like();
    for ((g, &yv), &gv) in gx.data_mut().iter_mut().zip(y.data()).zip(gy.data()) {
        *g = gv * (F::ONE - yv * yv);
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_known_values() {
        // gelu(0) = 0; gelu(1) = Phi(1) ~ 0.8413447460685429;
        // gelu(-1) = -(1 - Phi(1)) ~ -0.15865525393145707.
        let x = Tensor::from_vec(1, 1, 1, 3, alloc::vec![0.0f64, 1.0, -1.0]).unwrap();
        let y = gelu(&x);
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 0.8413447460685429).abs() < 1e-12);
        assert!((y.data()[2] + 0.15865525393145707).abs() < 1e-12);
    }

    #[test]
    fn activation_backwards_match_finite_differences() {
        let mut rng = crate::rng::Rng::new(77);
        let mut x = Tensor::<f64>::zeros(1, 2, 3, 3);
        for v in x.data_mut() {
            *v = 1.5 * rng.normal();
        }
        let gy = {
            let mut t = x.zeros_like();
            for v in t.data_mut() {
                *v = rng.normal();
            }
            t
        };
        let eps = 1e-6;
        let check = |name: &str, f: &dyn Fn(&Tensor<f64>) -> Tensor<f64>, gx: &Tensor<f64>| {
            for i in 0..x.numel() {
                let mut xp = x.clone();
                xp.data_mut()[i] += eps;
                let mut xm = x.clone();
                xm.data_mut()[i] -= eps;
                let lp: f64 = f(&xp).data().iter().zip(gy.data()).map(|(a, b)| a * b).sum();
                let lm: f64 = f(&xm).data().iter().zip(gy.data()).map(|(a, b)| a * b).sum();
                let fd = (lp - lm) / (2.0 * eps);
                assert!(
                    (fd - gx.data()[i]).abs() < 1e-6,
                    "{name}[{i}]: fd {fd} vs {}",
                    gx.data()[i]
                );
            }
        };
        check("gelu", &|t| gelu(t), &gelu_backward(&x, &gy));
        check(
            "leaky_relu",
            &|t| leaky_relu(t, 0.2),
            &leaky_relu_backward(&x, &gy, 0.2),
        );
        check("sigmoid", &|t| sigmoid(t), &sigmoid_backward(&sigmoid(&x), &gy));
        check("tanh", &|t| tanh_act(t), &tanh_backward(&tanh_act(&x), &gy));
    }
}
