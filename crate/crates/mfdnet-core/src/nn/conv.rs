//! 2D convolution with stride, zero padding, dilation, and groups.
//!
//! Weight layout is `(cout, cin/groups, k, k)` stored in a [`Tensor`]. The
//! kernels below iterate so that the innermost loop runs along contiguous
//! output/input rows (a scalar-times-slice accumulate), which the compiler
//! vectorizes; there is no im2col buffer.
//!
//! `backward` accumulates into the weight/bias gradients and returns the
//! input gradient, recomputing nothing: convolution needs only the original
//! input and the upstream gradient.

use super::{init_tensor, Init, Param, ParamOwner};
use crate::scalar::Real;
use crate::tensor::Tensor;
use alloc::format;

#[derive(Debug, Clone)]
pub struct Conv2d<F> {
    pub w: Param<F>,
    pub b: Option<Param<F>>,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dilation: usize,
    groups: usize,
}

impl<F: Real> Conv2d<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        dilation: usize,
        groups: usize,
        bias: bool,
        init: Init,
        seed: u64,
    ) -> Self {
        assert!(groups >= 1 && cin % groups == 0 && cout % groups == 0,
            "conv {name}: channels ({cin}->{cout}) must divide into {groups} groups");
        assert!(k >= 1 && stride >= 1 && dilation >= 1);
        let cin_pg = cin / groups;
        let fan_in = cin_pg * k * k;
        let w_name = format!("{name}.weight");
        let w = Param::new(
            w_name.clone(),
            init_tensor(&w_name, (cout, cin_pg, k, k), fan_in, init, seed),
        );
        let b = bias.then(|| {
            let b_name = format!("{name}.bias");
            Param::new(b_name, Tensor::zeros(cout, 1, 1, 1))
        });
        Conv2d {
            w,
            b,
            cin,
            cout,
            k,
            stride,
            pad,
            dilation,
            groups,
        }
    }

    /// Standard 1x1 pointwise convolution.
    pub fn pointwise(name: &str, cin: usize, cout: usize, init: Init, seed: u64) -> Self {
        Conv2d::new(name, cin, cout, 1, 1, 0, 1, 1, true, init, seed)
    }

    pub fn in_channels(&self) -> usize {
        self.cin
    }
    pub fn out_channels(&self) -> usize {
        self.cout
    }

    fn out_extent(&self, input: usize) -> usize {
        let span = self.dilation * (self.k - 1) + 1;
        assert!(
            input + 2 * self.pad >= span,
            "conv input extent {input} too small for kernel span {span} with pad {}",
            self.pad
        );
        (input + 2 * self.pad - span) / self.stride + 1
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (self.out_extent(h), self.out_extent(w))
    }

    /// Valid output-column range `[lo, hi)` for one kernel column offset, i.e.
    /// all `ox` with `0 <= ox*stride + off_x < in_w`.
    #[inline]
    fn col_range(&self, off_x: isize, in_w: usize, out_w: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if off_x >= 0 {
            0
        } else {
            ((-off_x) as usize).div_ceil(s)
        };
        let rem = in_w as isize - off_x;
        if rem <= 0 {
            return (0, 0);
        }
        let hi = out_w.min((rem as usize).div_ceil(s));
        (lo, hi.max(lo))
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        let (n, c, h, w) = x.shape();
        assert_eq!(c, self.cin, "conv expects {} input channels, got {c}", self.cin);
        let (ho, wo) = self.out_hw(h, w);
        let mut y = Tensor::zeros(n, self.cout, ho, wo);
        let cin_pg = self.cin / self.groups;
        let cout_pg = self.cout / self.groups;
        let s = self.stride;

        for ni in 0..n {
            for co in 0..self.cout {
                if let Some(b) = &self.b {
                    y.plane_mut(ni, co).fill(b.v.data()[co]);
                }
                let ci0 = (co / cout_pg) * cin_pg;
                for cil in 0..cin_pg {
                    let ci = ci0 + cil;
                    for ky in 0..self.k {
                        let off_y = (ky * self.dilation) as isize - self.pad as isize;
                        for kx in 0..self.k {
                            let wv = self.w.v.at(co, cil, ky, kx);
                            // Zero taps contribute exactly nothing; skipping
                            // them keeps zero-initialized projections from
                            // perturbing the identity path at all.
                            if wv == F::ZERO {
                                continue;
                            }
                            let off_x = (kx * self.dilation) as isize - self.pad as isize;
                            let (lo, hi) = self.col_range(off_x, w, wo);
                            if lo >= hi {
                                continue;
                            }
                            for oy in 0..ho {
                                let iy = (oy * s) as isize + off_y;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let xr = x.row(ni, ci, iy as usize);
                                let yr = y.row_mut(ni, co, oy);
                                if s == 1 {
                                    let x_off = (lo as isize + off_x) as usize;
                                    let src = &xr[x_off..x_off + (hi - lo)];
                                    for (d, sv) in yr[lo..hi].iter_mut().zip(src) {
                                        *d += wv * *sv;
                                    }
                                } else {
                                    for ox in lo..hi {
                                        let ix = ((ox * s) as isize + off_x) as usize;
                                        yr[ox] += wv * xr[ix];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    /// Accumulate weight/bias gradients and return the input gradient.
    pub fn backward(&mut self, x: &Tensor<F>, gy: &Tensor<F>) -> Tensor<F> {
        let (n, c, h, w) = x.shape();
        assert_eq!(c, self.cin);
        let (ho, wo) = self.out_hw(h, w);
        assert_eq!(gy.shape(), (n, self.cout, ho, wo), "conv backward shape mismatch");
        let cin_pg = self.cin / self.groups;
        let cout_pg = self.cout / self.groups;
        let s = self.stride;
        let mut gx = x.zeros_like();

        if let Some(b) = &mut self.b {
            for co in 0..self.cout {
                let mut acc = F::ZERO;
                for ni in 0..n {
                    for v in gy.plane(ni, co) {
                        acc += *v;
                    }
                }
                b.g.data_mut()[co] += acc;
            }
        }

        for ni in 0..n {
            for co in 0..self.cout {
                let ci0 = (co / cout_pg) * cin_pg;
                for cil in 0..cin_pg {
                    let ci = ci0 + cil;
                    for ky in 0..self.k {
                        let off_y = (ky * self.dilation) as isize - self.pad as isize;
                        for kx in 0..self.k {
                            let off_x = (kx * self.dilation) as isize - self.pad as isize;
                            let (lo, hi) = self.col_range(off_x, w, wo);
                            if lo >= hi {
                                continue;
                            }
                            let wv = self.w.v.at(co, cil, ky, kx);
                            let mut gw_acc = F::ZERO;
                            for oy in 0..ho {
                                let iy = (oy * s) as isize + off_y;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let gyr = gy.row(ni, co, oy);
                                let xr = x.row(ni, ci, iy as usize);
                                if s == 1 {
                                    let x_off = (lo as isize + off_x) as usize;
                                    for (gv, xv) in
                                        gyr[lo..hi].iter().zip(&xr[x_off..x_off + (hi - lo)])
                                    {
                                        gw_acc += *gv * *xv;
                                    }
                                } else {
                                    for ox in lo..hi {
                                        let ix = ((ox * s) as isize + off_x) as usize;
                                        gw_acc += gyr[ox] * xr[ix];
                                    }
                                }
                                if wv != F::ZERO {
                                    let gxr = gx.row_mut(ni, ci, iy as usize);
                                    if s == 1 {
                                        let x_off = (lo as isize + off_x) as usize;
                                        for (d, gv) in gxr[x_off..x_off + (hi - lo)]
                                            .iter_mut()
                                            .zip(&gyr[lo..hi])
                                        {
                                            *d += wv * *gv;
                                        }
                                    } else {
                                        for ox in lo..hi {
                                            let ix = ((ox * s) as isize + off_x) as usize;
                                            gxr[ix] += wv * gyr[ox];
                                        }
                                    }
                                }
                            }
                            let gw_i = self.w.v.idx(co, cil, ky, kx);
                            self.w.g.data_mut()[gw_i] += gw_acc;
                        }
                    }
                }
            }
        }
        gx
    }
}

impl<F: Real> ParamOwner<F> for Conv2d<F> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        f(&mut self.w);
        if let Some(b) = &mut self.b {
            f(b);
        }
    }
}
