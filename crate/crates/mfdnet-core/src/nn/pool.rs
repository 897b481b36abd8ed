//! Average pooling: global (to 1x1) and adaptive (to a fixed grid).
//!
//! Adaptive pooling partitions each axis into `g` bins with floor/ceil
//! boundaries (`[floor(i*L/g), ceil((i+1)*L/g))`), matching the usual
//! adaptive-pool convention, so any input size maps onto a fixed grid.
//! Both ops are linear; backwards distribute gradients uniformly over each
//! pooled region.

use crate::scalar::Real;
use crate::tensor::Tensor;

pub fn global_avg_pool<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let (n, c, h, w) = x.shape();
    let inv = F::ONE / F::from_usize(h * w);
    let mut y = Tensor::zeros(n, c, 1, 1);
    for ni in 0..n {
        for ci in 0..c {
            let mut acc = F::ZERO;
            for v in x.plane(ni, ci) {
                acc += *v;
            }
            *y.at_mut(ni, ci, 0, 0) = acc * inv;
        }
    }
    y
}

pub fn global_avg_pool_backward<F: Real>(gy: &Tensor<F>, in_h: usize, in_w: usize) -> Tensor<F> {
    let (n, c, h, w) = gy.shape();
    assert_eq!((h, w), (1, 1));
    let inv = F::ONE / F::from_usize(in_h * in_w);
    let mut gx = Tensor::zeros(n, c, in_h, in_w);
    for ni in 0..n {
        for ci in 0..c {
            let g = gy.at(ni, ci, 0, 0) * inv;
            for v in gx.plane_mut(ni, ci) {
                *v = g;
            }
        }
    }
    gx
}

#[inline]
fn bin_bounds(i: usize, len: usize, grid: usize) -> (usize, usize) {
    let lo = i * len / grid;
    let hi = ((i + 1) * len).div_ceil(grid);
    (lo, hi)
}

pub fn adaptive_avg_pool<F: Real>(x: &Tensor<F>, grid_h: usize, grid_w: usize) -> Tensor<F> {
    let (n, c, h, w) = x.shape();
    assert!(grid_h >= 1 && grid_w >= 1 && grid_h <= h && grid_w <= w,
        "adaptive pool grid {grid_h}x{grid_w} must fit within input {h}x{w}");
    let mut y = Tensor::zeros(n, c, grid_h, grid_w);
    for ni in 0..n {
        for ci in 0..c {
            for gy_ in 0..grid_h {
                let (y0, y1) = bin_bounds(gy_, h, grid_h);
                for gx_ in 0..grid_w {
                    let (x0, x1) = bin_bounds(gx_, w, grid_w);
                    let mut acc = F::ZERO;
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            acc += x.at(ni, ci, yy, xx);
                        }
                    }
                    let count = F::from_usize((y1 - y0) * (x1 - x0));
                    *y.at_mut(ni, ci, gy_, gx_) = acc / count;
                }
            }
        }
    }
    y
}

pub fn adaptive_avg_pool_backward<F: Real>(gy: &Tensor<F>, in_h: usize, in_w: usize) -> Tensor<F> {
    let (n, c, gh, gw) = gy.shape();
    let mut gx = Tensor::zeros(n, c, in_h, in_w);
    for ni in 0..n {
        for ci in 0..c {
            for gy_ in 0..gh {
                let (y0, y1) = bin_bounds(gy_, in_h, gh);
                for gx_ in 0..gw {
                    let (x0, x1) = bin_bounds(gx_, in_w, gw);
                    let count = F::from_usize((y1 - y0) * (x1 - x0));
                    let g = gy.at(ni, ci, gy_, gx_) / count;
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            *gx.at_mut(ni, ci, yy, xx) += g;
                        }
                    }
                }
            }
        }
    }
    gx
}
