//! Fully connected layer on per-sample channel vectors.
//!
//! Operates on tensors of shape `(n, c, 1, 1)` — the result of a global
//! pooling step — so the rest of the stack stays in one tensor type.

use super::{init_tensor, Init, Param, ParamOwner};
use crate::scalar::Real;
use crate::tensor::Tensor;
use alloc::format;

#[derive(Debug, Clone)]
pub struct Linear<F> {
    pub w: Param<F>,
    pub b: Param<F>,
    cin: usize,
    cout: usize,
}

impl<F: Real> Linear<F> {
    pub fn new(name: &str, cin: usize, cout: usize, init: Init, seed: u64) -> Self {
        let w_name = format!("{name}.weight");
        let w = Param::new(
            w_name.clone(),
            init_tensor(&w_name, (cout, cin, 1, 1), cin, init, seed),
        );
        let b = Param::new(format!("{name}.bias"), Tensor::zeros(cout, 1, 1, 1));
        Linear { w, b, cin, cout }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        let (n, c, h, w) = x.shape();
        assert_eq!((c, h, w), (self.cin, 1, 1), "linear expects (n,{},1,1)", self.cin);
        let mut y = Tensor::zeros(n, self.cout, 1, 1);
        for ni in 0..n {
            // All channels of one sample are contiguous when h = w = 1.
            let start = x.idx(ni, 0, 0, 0);
            let xs = &x.data()[start..start + self.cin];
            for o in 0..self.cout {
                let mut acc = self.b.v.data()[o];
                let wrow = {
                    let ws = self.w.v.idx(o, 0, 0, 0);
                    &self.w.v.data()[ws..ws + self.cin]
                };
                for (wv, xv) in wrow.iter().zip(xs) {
                    acc += *wv * *xv;
                }
                *y.at_mut(ni, o, 0, 0) = acc;
            }
        }
        y
    }

    pub fn backward(&mut self, x: &Tensor<F>, gy: &Tensor<F>) -> Tensor<F> {
        let n = x.batch();
        assert_eq!(gy.shape(), (n, self.cout, 1, 1));
        let mut gx = x.zeros_like();
        for ni in 0..n {
            let xs_start = x.idx(ni, 0, 0, 0);
            for o in 0..self.cout {
                let go = gy.at(ni, o, 0, 0);
                self.b.g.data_mut()[o] += go;
                let ws = self.w.v.idx(o, 0, 0, 0);
                for i in 0..self.cin {
                    self.w.g.data_mut()[ws + i] += go * x.data()[xs_start + i];
                    gx.data_mut()[xs_start + i] += go * self.w.v.data()[ws + i];
                }
            }
        }
        gx
    }
}

impl<F: Real> ParamOwner<F> for Linear<F> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_is_matrix_vector_plus_bias() {
        let mut lin = Linear::<f64>::new("l", 3, 2, Init::Zero, 0);
        // w = [[1,2,3],[4,5,6]], b = [10, 20]
        lin.w.v.data_mut().copy_from_slice(&[1., 2., 3., 4., 5., 6.]);
        lin.b.v.data_mut().copy_from_slice(&[10., 20.]);
        let x = Tensor::from_vec(2, 3, 1, 1, alloc::vec![1., 1., 1., 0., 1., 0.]).unwrap();
        let y = lin.forward(&x);
        assert_eq!(y.data(), &[16., 35., 12., 25.]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut lin = Linear::<f64>::new("l", 4, 3, Init::FanInUniform, 3);
        let mut rng = crate::rng::Rng::new(8);
        let mut x = Tensor::<f64>::zeros(2, 4, 1, 1);
        for v in x.data_mut() {
            *v = rng.normal();
        }
        let mut gy = Tensor::<f64>::zeros(2, 3, 1, 1);
        for v in gy.data_mut() {
            *v = rng.normal();
        }
        let loss =
            |l: &Linear<f64>, x: &Tensor<f64>| -> f64 {
                l.forward(x).data().iter().zip(gy.data()).map(|(a, b)| a * b).sum()
            };
        let gx = lin.backward(&x, &gy);
        let eps = 1e-6;
        for i in 0..x.numel() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let fd = (loss(&lin, &xp) - loss(&lin, &xm)) / (2.0 * eps);
            assert!((fd - gx.data()[i]).abs() < 1e-7, "gx[{i}]");
        }
        for i in 0..lin.w.v.numel() {
            let orig = lin.w.v.data()[i];
            lin.w.v.data_mut()[i] = orig + eps;
            let lp = loss(&lin, &x);
            lin.w.v.data_mut()[i] = orig - eps;
            let lm = loss(&lin, &x);
            lin.w.v.data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - lin.w.g.data()[i]).abs() < 1e-7, "gw[{i}]");
        }
    }
}
