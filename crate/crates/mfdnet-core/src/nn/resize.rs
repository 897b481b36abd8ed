//! Bilinear resampling with the half-pixel (pixel-center) convention.
//!
//! Destination pixel `d` maps to source coordinate
//! `(d + 0.5) * in/out - 0.5`, with the four sampled neighbors clamped to
//! the image border. This matches the convention used by the common tensor
//! libraries when corner alignment is off, and is what the 2x upsampling
//! inside the pyramid and the mask/feature upsamplers all use.
//!
//! Resampling is linear in the input, so the backward pass is the exact
//! adjoint: scatter each output gradient to the same four taps with the same
//! weights.

use crate::scalar::Real;
use crate::tensor::Tensor;

/// Per-axis tap: two clamped source indices and the interpolation weight.
#[inline]
fn taps(dst: usize, src_len: usize, scale: f64) -> (usize, usize, f64) {
    let s = (dst as f64 + 0.5) * scale - 0.5;
    let floor = libm::floor(s);
    let frac = s - floor;
    let i0 = floor as isize;
    let i1 = i0 + 1;
    let clamp = |i: isize| -> usize { i.clamp(0, src_len as isize - 1) as usize };
    (clamp(i0), clamp(i1), frac)
}

pub fn bilinear_resize<F: Real>(x: &Tensor<F>, out_h: usize, out_w: usize) -> Tensor<F> {
    let (n, c, h, w) = x.shape();
    assert!(h > 0 && w > 0 && out_h > 0 && out_w > 0);
    let mut y = Tensor::zeros(n, c, out_h, out_w);
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..out_h {
                let (y0, y1, wy) = taps(oy, h, sy);
                let r0 = x.row(ni, ci, y0);
                let r1 = x.row(ni, ci, y1);
                let wy_f = F::from_f64(wy);
                let one_m_wy = F::ONE - wy_f;
                let yr = y.row_mut(ni, ci, oy);
                for (ox, out) in yr.iter_mut().enumerate() {
                    let (x0, x1, wx) = taps(ox, w, sx);
                    let wx_f = F::from_f64(wx);
                    let one_m_wx = F::ONE - wx_f;
                    let top = one_m_wx * r0[x0] + wx_f * r0[x1];
                    let bot = one_m_wx * r1[x0] + wx_f * r1[x1];
                    *out = one_m_wy * top + wy_f * bot;
                }
            }
        }
    }
    y
}

/// Adjoint of [`bilinear_resize`]: scatter `gy` back onto a grid of size
/// `(in_h, in_w)` using the same taps and weights.
pub fn bilinear_resize_backward<F: Real>(gy: &Tensor<F>, in_h: usize, in_w: usize) -> Tensor<F> {
    let (n, c, out_h, out_w) = gy.shape();
    let mut gx = Tensor::zeros(n, c, in_h, in_w);
    let sy = in_h as f64 / out_h as f64;
    let sx = in_w as f64 / out_w as f64;
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..out_h {
                let (y0, y1, wy) = taps(oy, in_h, sy);
                let wy_f = F::from_f64(wy);
                let one_m_wy = F::ONE - wy_f;
                for ox in 0..out_w {
                    let (x0, x1, wx) = taps(ox, in_w, sx);
                    let wx_f = F::from_f64(wx);
                    let one_m_wx = F::ONE - wx_f;
                    let g = gy.at(ni, ci, oy, ox);
                    *gx.at_mut(ni, ci, y0, x0) += one_m_wy * one_m_wx * g;
                    *gx.at_mut(ni, ci, y0, x1) += one_m_wy * wx_f * g;
                    *gx.at_mut(ni, ci, y1, x0) += wy_f * one_m_wx * g;
                    *gx.at_mut(ni, ci, y1, x1) += wy_f * wx_f * g;
                }
            }
        }
    }
    gx
}

/// Double both spatial extents.
pub fn upsample2x<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    bilinear_resize(x, x.height() * 2, x.width() * 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_a_two_pixel_ramp_gives_quarter_points() {
        // Half-pixel convention on [0, 1] at 2x: edge pixels replicate,
        // interior pixels land at 1/4 and 3/4.
        let x = Tensor::from_vec(1, 1, 1, 2, alloc::vec![0.0f64, 1.0]).unwrap();
        let y = bilinear_resize(&x, 1, 4);
        let want = [0.0, 0.25, 0.75, 1.0];
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-15, "{:?}", y.data());
        }
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let mut rng = crate::rng::Rng::new(10);
        let mut x = Tensor::<f64>::zeros(1, 2, 5, 7);
        for v in x.data_mut() {
            *v = rng.normal();
        }
        let y = bilinear_resize(&x, 5, 7);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_is_the_exact_adjoint() {
        // <A x, u> == <x, A^T u> for random x, u.
        let mut rng = crate::rng::Rng::new(31);
        let mut x = Tensor::<f64>::zeros(2, 3, 5, 6);
        for v in x.data_mut() {
            *v = rng.normal();
        }
        let mut u = Tensor::<f64>::zeros(2, 3, 9, 11);
        for v in u.data_mut() {
            *v = rng.normal();
        }
        let ax = bilinear_resize(&x, 9, 11);
        let atu = bilinear_resize_backward(&u, 5, 6);
        let lhs: f64 = ax.data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(atu.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
