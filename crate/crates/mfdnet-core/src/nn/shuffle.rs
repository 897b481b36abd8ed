//! Pixel shuffle (depth-to-space) with upscale factor `r`.
//!
//! `(n, c*r^2, h, w) -> (n, c, h*r, w*r)` where output pixel
//! `(c, y*r+dy, x*r+dx)` reads input channel `c*r^2 + dy*r + dx`. A pure
//! permutation, so the backward pass is the inverse permutation.

use crate::scalar::Real;
use crate::tensor::Tensor;

pub fn pixel_shuffle<F: Real>(x: &Tensor<F>, r: usize) -> Tensor<F> {
    let (n, c, h, w) = x.shape();
    assert!(r >= 1 && c % (r * r) == 0, "pixel shuffle needs channels divisible by r^2");
    let co = c / (r * r);
    let mut y = Tensor::zeros(n, co, h * r, w * r);
    for ni in 0..n {
        for c_out in 0..co {
            for dy in 0..r {
                for dx in 0..r {
                    let c_in = c_out * r * r + dy * r + dx;
                    for yy in 0..h {
                        let src = x.row(ni, c_in, yy);
                        let dst = y.row_mut(ni, c_out, yy * r + dy);
                        for (xx, v) in src.iter().enumerate() {
                            dst[xx * r + dx] = *v;
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn pixel_shuffle_backward<F: Real>(gy: &Tensor<F>, r: usize) -> Tensor<F> {
    let (n, co, ho, wo) = gy.shape();
    assert!(ho % r == 0 && wo % r == 0);
    let (h, w) = (ho / r, wo / r);
    let mut gx = Tensor::zeros(n, co * r * r, h, w);
    for ni in 0..n {
        for c_out in 0..co {
            for dy in 0..r {
                for dx in 0..r {
                    let c_in = c_out * r * r + dy * r + dx;
                    for yy in 0..h {
                        let src = gy.row(ni, c_out, yy * r + dy);
                        let dst = gx.row_mut(ni, c_in, yy);
                        for (xx, d) in dst.iter_mut().enumerate() {
                            *d = src[xx * r + dx];
                        }
                    }
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffle_places_channel_blocks_into_pixel_blocks() {
        // 4 channels, 1x1 spatial, r=2: channels [a,b,c,d] become the 2x2
        // patch [[a, b], [c, d]].
        let x = Tensor::from_vec(1, 4, 1, 1, alloc::vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_shuffle(&x, 2);
        assert_eq!(y.shape(), (1, 1, 2, 2));
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn backward_inverts_forward() {
        let mut rng = crate::rng::Rng::new(2);
        let mut x = Tensor::<f64>::zeros(2, 8, 3, 4);
        for v in x.data_mut() {
            *v = rng.normal();
        }
        let y = pixel_shuffle(&x, 2);
        assert_eq!(y.shape(), (2, 2, 6, 8));
        let back = pixel_shuffle_backward(&y, 2);
        assert_eq!(back, x);
    }
}
