//! Layer normalization over the channel axis at each spatial position.
//!
//! For every `(n, y, x)` the C-vector is normalized to zero mean / unit
//! variance (biased variance, epsilon inside the square root) and then
//! rescaled by per-channel affine parameters. The backward pass recomputes
//! the per-position statistics rather than caching them: they cost O(C) and
//! caching would double activation memory for no measurable gain at the
//! spatial sizes this network runs at.

use super::{Param, ParamOwner};
use crate::scalar::Real;
use crate::tensor::Tensor;
use alloc::format;
use alloc::vec;

#[derive(Debug, Clone)]
pub struct LayerNorm2d<F> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    c: usize,
    eps: F,
}

impl<F: Real> LayerNorm2d<F> {
    pub fn new(name: &str, c: usize) -> Self {
        let gamma = Param::new(format!("{name}.gamma"), Tensor::filled(1, c, 1, 1, F::ONE));
        let beta = Param::new(format!("{name}.beta"), Tensor::zeros(1, c, 1, 1));
        LayerNorm2d {
            gamma,
            beta,
            c,
            eps: F::from_f64(1e-6),
        }
    }

    #[inline]
    fn stats(&self, x: &Tensor<F>, ni: usize, y: usize, xi: usize) -> (F, F) {
        let c = self.c;
        let inv_c = F::ONE / F::from_usize(c);
        let mut mean = F::ZERO;
        for ci in 0..c {
            mean += x.at(ni, ci, y, xi);
        }
        mean *= inv_c;
        let mut var = F::ZERO;
        for ci in 0..c {
            let d = x.at(ni, ci, y, xi) - mean;
            var += d * d;
        }
        var *= inv_c;
        let inv_std = F::ONE / (var + self.eps).sqrt();
        (mean, inv_std)
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        let (n, c, h, w) = x.shape();
        assert_eq!(c, self.c, "layer norm expects {} channels", self.c);
        let mut out = x.zeros_like();
        for ni in 0..n {
            for y in 0..h {
                for xi in 0..w {
                    let (mean, inv_std) = self.stats(x, ni, y, xi);
                    for ci in 0..c {
                        let xhat = (x.at(ni, ci, y, xi) - mean) * inv_std;
                        *out.at_mut(ni, ci, y, xi) =
                            self.gamma.v.data()[ci] * xhat + self.beta.v.data()[ci];
                    }
                }
            }
        }
        out
    }

    pub fn backward(&mut self, x: &Tensor<F>, gy: &Tensor<F>) -> Tensor<F> {
        let (n, c, h, w) = x.shape();
        assert_eq!(gy.shape(), x.shape());
        let inv_c = F::ONE / F::from_usize(c);
        let mut gx = x.zeros_like();
        let mut xhat = vec![F::ZERO; c];
        for ni in 0..n {
            for y in 0..h {
                for xi in 0..w {
                    let (mean, inv_std) = self.stats(x, ni, y, xi);
                    // g = dL/dxhat; accumulate its mean and its xhat-weighted mean.
                    let mut g_mean = F::ZERO;
                    let mut gx_mean = F::ZERO;
                    for ci in 0..c {
                        let xh = (x.at(ni, ci, y, xi) - mean) * inv_std;
                        xhat[ci] = xh;
                        let gv = gy.at(ni, ci, y, xi);
                        self.gamma.g.data_mut()[ci] += gv * xh;
                        self.beta.g.data_mut()[ci] += gv;
                        let g = gv * self.gamma.v.data()[ci];
                        g_mean += g;
                        gx_mean += g * xh;
                    }
                    g_mean *= inv_c;
                    gx_mean *= inv_c;
                    for ci in 0..c {
                        let g = gy.at(ni, ci, y, xi) * self.gamma.v.data()[ci];
                        *gx.at_mut(ni, ci, y, xi) =
                            inv_std * (g - g_mean - xhat[ci] * gx_mean);
                    }
                }
            }
        }
        gx
    }
}

impl<F: Real> ParamOwner<F> for LayerNorm2d<F> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}
