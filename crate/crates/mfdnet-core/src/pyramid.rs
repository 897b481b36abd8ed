//! Laplacian pyramid: multi-frequency image decomposition.
//!
//! `decompose` peels `depth` high-frequency bands off the input: at each
//! level the current image is blurred with a separable 5-tap binomial kernel
//! (`[1,4,6,4,1]/16`, reflect padding) and subsampled by 2; the band is the
//! difference between the current image and the bilinear 2x upsampling of
//! that half-size image. What remains after the last level is the
//! low-frequency residual.
//!
//! Reconstruction is exact by construction — `band + upsample(coarser)`
//! re-adds exactly what was subtracted, for *any* upsampling operator, as
//! long as the same operator is used on both sides. The only error is
//! floating-point rounding from the subtract/add round trip.
//!
//! Both directions are linear, so their backward passes are exact adjoints
//! (same taps, gather swapped for scatter).
//!
//! Sizing contract: height and width must be divisible by `2^depth` with a
//! residual of at least 2 pixels per axis (so reflect padding at the
//! coarsest blur never needs to fold twice). Smallest valid input for
//! depth 3 is 16x16.

use crate::error::{Error, Result};
use crate::nn::resize::{bilinear_resize, bilinear_resize_backward};
use crate::scalar::Real;
use crate::tensor::Tensor;
use alloc::format;
use alloc::vec::Vec;

/// Binomial 5-tap kernel, normalized. Dyadic values, so the taps sum to
/// exactly 1.0 in binary floating point.
const KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Bands ordered finest to coarsest, plus the low-frequency residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid<F> {
    pub bands: Vec<Tensor<F>>,
    pub residual: Tensor<F>,
}

impl<F: Real> Pyramid<F> {
    pub fn depth(&self) -> usize {
        self.bands.len()
    }
}

/// Reflect an out-of-range index back into `[0, n)` without repeating the
/// edge sample (`-1 -> 1`, `n -> n-2`). Valid for offsets up to `n - 1`.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    debug_assert!(n >= 2);
    let j = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    debug_assert!((0..n).contains(&j), "reflect({i}) out of range for n={n}");
    j as usize
}

/// Blur along the width axis and keep even columns. Output width is w/2.
fn blur_sub_w<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let (n, c, h, w) = x.shape();
    let wo = w / 2;
    let taps: [F; 5] = core::array::from_fn(|i| F::from_f64(KERNEL[i]));
    let mut y = Tensor::zeros(n, c, h, wo);
    for ni in 0..n {
        for ci in 0..c {
            for yy in 0..h {
                let src = x.row(ni, ci, yy);
                let dst = y.row_mut(ni, ci, yy);
                for (ox, d) in dst.iter_mut().enumerate() {
                    let center = 2 * ox as isize;
                    let mut acc = F::ZERO;
                    for (t, tap) in taps.iter().enumerate() {
                        acc += *tap * src[reflect(center + t as isize - 2, w)];
                    }
                    *d = acc;
                }
            }
        }
    }
    y
}

/// Blur along the height axis and keep even rows. Output height is h/2.
fn blur_sub_h<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let (n, c, h, w) = x.shape();
    let ho = h / 2;
    let taps: [F; 5] = core::array::from_fn(|i| F::from_f64(KERNEL[i]));
    let mut y = Tensor::zeros(n, c, ho, w);
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..ho {
                let center = 2 * oy as isize;
                let rows: [&[F]; 5] =
                    core::array::from_fn(|t| x.row(ni, ci, reflect(center + t as isize - 2, h)));
                let dst = y.row_mut(ni, ci, oy);
                for (xx, d) in dst.iter_mut().enumerate() {
                    let mut acc = F::ZERO;
                    for (t, tap) in taps.iter().enumerate() {
                        acc += *tap * rows[t][xx];
                    }
                    *d = acc;
                }
            }
        }
    }
    y
}

/// Separable binomial blur followed by 2x subsampling on both axes.
/// Requires even extents of at least 4.
pub fn blur_downsample<F: Real>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let (_, _, h, w) = x.shape();
    if h % 2 != 0 || w % 2 != 0 || h < 4 || w < 4 {
        return Err(Error::dimension(format!(
            "blur_downsample needs even extents of at least 4, got {h}x{w}"
        )));
    }
    Ok(blur_sub_h(&blur_sub_w(x)))
}

/// Adjoint of [`blur_downsample`] onto an `(in_h, in_w)` grid.
pub fn blur_downsample_backward<F: Real>(gy: &Tensor<F>, in_h: usize, in_w: usize) -> Tensor<F> {
    let (n, c, ho, wo) = gy.shape();
    debug_assert_eq!((ho, wo), (in_h / 2, in_w / 2));
    let taps: [F; 5] = core::array::from_fn(|i| F::from_f64(KERNEL[i]));
    // Adjoint of the height pass: scatter rows back onto in_h rows.
    let mut gh = Tensor::zeros(n, c, in_h, wo);
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..ho {
                let center = 2 * oy as isize;
                for (t, tap) in taps.iter().enumerate() {
                    let iy = reflect(center + t as isize - 2, in_h);
                    // Split borrows: gy row is read-only, gh row is written.
                    for xx in 0..wo {
                        *gh.at_mut(ni, ci, iy, xx) += *tap * gy.at(ni, ci, oy, xx);
                    }
                }
            }
        }
    }
    // Adjoint of the width pass.
    let mut gx = Tensor::zeros(n, c, in_h, in_w);
    for ni in 0..n {
        for ci in 0..c {
            for yy in 0..in_h {
                for ox in 0..wo {
                    let g = gh.at(ni, ci, yy, ox);
                    let center = 2 * ox as isize;
                    let dst = gx.row_mut(ni, ci, yy);
                    for (t, tap) in taps.iter().enumerate() {
                        dst[reflect(center + t as isize - 2, in_w)] += *tap * g;
                    }
                }
            }
        }
    }
    gx
}

/// Separable binomial smoothing without resampling (reflect padding).
/// The same 5-tap kernel the decimation uses; one pass softens a hard
/// mask edge over a 2-pixel skirt. Requires extents of at least 3.
pub fn blur<F: Real>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, c, h, w) = x.shape();
    if h < 3 || w < 3 {
        return Err(Error::dimension(format!(
            "blur needs extents of at least 3, got {h}x{w}"
        )));
    }
    let taps: [F; 5] = core::array::from_fn(|i| F::from_f64(KERNEL[i]));
    let mut yw = Tensor::zeros(n, c, h, w);
    for ni in 0..n {
        for ci in 0..c {
            for yy in 0..h {
                let src = x.row(ni, ci, yy);
                let dst = yw.row_mut(ni, ci, yy);
                for (ox, d) in dst.iter_mut().enumerate() {
                    let mut acc = F::ZERO;
                    for (t, tap) in taps.iter().enumerate() {
                        acc += *tap * src[reflect(ox as isize + t as isize - 2, w)];
                    }
                    *d = acc;
                }
            }
        }
    }
    let mut y = Tensor::zeros(n, c, h, w);
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..h {
                let rows: [&[F]; 5] = core::array::from_fn(|t| {
                    yw.row(ni, ci, reflect(oy as isize + t as isize - 2, h))
                });
                let dst = y.row_mut(ni, ci, oy);
                for (xx, d) in dst.iter_mut().enumerate() {
                    let mut acc = F::ZERO;
                    for (t, tap) in taps.iter().enumerate() {
                        acc += *tap * rows[t][xx];
                    }
                    *d = acc;
                }
            }
        }
    }
    Ok(y)
}

/// Bilinear 2x upsampling (half-pixel convention).
pub fn upsample2x<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    bilinear_resize(x, x.height() * 2, x.width() * 2)
}

/// Adjoint of [`upsample2x`].
pub fn upsample2x_backward<F: Real>(gy: &Tensor<F>) -> Tensor<F> {
    bilinear_resize_backward(gy, gy.height() / 2, gy.width() / 2)
}

fn check_dims<F: Real>(x: &Tensor<F>, depth: usize) -> Result<()> {
    if depth == 0 {
        return Err(Error::argument("pyramid depth must be at least 1"));
    }
    let (_, _, h, w) = x.shape();
    let div = 1usize << depth;
    if h % div != 0 || w % div != 0 || h / div < 2 || w / div < 2 {
        return Err(Error::dimension(format!(
            "pyramid depth {depth} needs extents divisible by {div} with residual >= 2, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Split `x` into `depth` detail bands (finest first) plus a residual.
pub fn decompose<F: Real>(x: &Tensor<F>, depth: usize) -> Result<Pyramid<F>> {
    check_dims(x, depth)?;
    let mut bands = Vec::with_capacity(depth);
    let mut cur = x.clone();
    for _ in 0..depth {
        let down = blur_downsample(&cur)?;
        let up = upsample2x(&down);
        bands.push(cur.sub(&up));
        cur = down;
    }
    Ok(Pyramid {
        bands,
        residual: cur,
    })
}

/// Inverse of [`decompose`]: fold the residual back up through the bands.
pub fn reconstruct<F: Real>(p: &Pyramid<F>) -> Result<Tensor<F>> {
    if p.bands.is_empty() {
        return Err(Error::structure("pyramid has no bands"));
    }
    let mut cur = p.residual.clone();
    for (level, band) in p.bands.iter().enumerate().rev() {
        let up = upsample2x(&cur);
        if band.shape() != up.shape() {
            return Err(Error::structure(format!(
                "band {level} has shape {:?}, expected {:?}",
                band.shape(),
                up.shape()
            )));
        }
        cur = band.add(&up);
    }
    Ok(cur)
}

/// Backward of [`decompose`]: map band/residual gradients to an input
/// gradient. `gbands` is ordered finest first, like `Pyramid::bands`.
pub fn decompose_backward<F: Real>(gbands: &[Tensor<F>], gresidual: &Tensor<F>) -> Tensor<F> {
    let mut g_cur = gresidual.clone();
    for gband in gbands.iter().rev() {
        // Forward at this level: down = blur_downsample(cur);
        // band = cur - upsample2x(down); next cur = down.
        let (_, _, bh, bw) = gband.shape();
        let g_down = g_cur.sub(&upsample2x_backward(gband));
        g_cur = gband.add(&blur_downsample_backward(&g_down, bh, bw));
    }
    g_cur
}

/// Backward of [`reconstruct`]: split an output gradient into band gradients
/// (finest first) and a residual gradient.
pub fn reconstruct_backward<F: Real>(gout: &Tensor<F>, depth: usize) -> (Vec<Tensor<F>>, Tensor<F>) {
    let mut gbands = Vec::with_capacity(depth);
    let mut g = gout.clone();
    for _ in 0..depth {
        gbands.push(g.clone());
        g = upsample2x_backward(&g);
    }
    (gbands, g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(shape: (usize, usize, usize, usize), seed: u64) -> Tensor<f64> {
        let mut rng = crate::rng::Rng::new(seed);
        let mut t = Tensor::zeros(shape.0, shape.1, shape.2, shape.3);
        for v in t.data_mut() {
            *v = rng.normal();
        }
        t
    }

    /// Nested-loop 2D reference: full 5x5 outer-product kernel, reflect
    /// indexing, then subsample even positions.
    fn blur_downsample_reference(x: &Tensor<f64>) -> Tensor<f64> {
        let (n, c, h, w) = x.shape();
        let mut y = Tensor::zeros(n, c, h / 2, w / 2);
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..h / 2 {
                    for ox in 0..w / 2 {
                        let mut acc = 0.0;
                        for ty in 0..5 {
                            for tx in 0..5 {
                                let iy = reflect(2 * oy as isize + ty as isize - 2, h);
                                let ix = reflect(2 * ox as isize + tx as isize - 2, w);
                                acc += KERNEL[ty] * KERNEL[tx] * x.at(ni, ci, iy, ix);
                            }
                        }
                        *y.at_mut(ni, ci, oy, ox) = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn impulse_response_matches_nested_loop_reference() {
        // Unit impulse at the center of an 8x8 zero image.
        let mut x = Tensor::<f64>::zeros(1, 1, 8, 8);
        *x.at_mut(0, 0, 4, 4) = 1.0;
        let got = blur_downsample(&x).unwrap();
        let want = blur_downsample_reference(&x);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        // Spot values: output (2,2) sits on the impulse -> center tap squared;
        // output (1,2) is two rows up -> k[0]*k[2].
        assert!((got.at(0, 0, 2, 2) - (6.0 / 16.0) * (6.0 / 16.0)).abs() < 1e-15);
        assert!((got.at(0, 0, 1, 2) - (1.0 / 16.0) * (6.0 / 16.0)).abs() < 1e-15);
    }

    #[test]
    fn blur_preserves_constants_exactly() {
        // The kernel is dyadic and sums to exactly 1, so a constant image
        // stays bit-identical through the blur.
        let x = Tensor::<f64>::filled(1, 2, 8, 12, 0.8125);
        let y = blur_downsample(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.8125));
    }

    #[test]
    fn plain_blur_matches_reference_and_keeps_flat_regions_exact() {
        // Cross-check against a nested-loop full 5x5 kernel, no subsampling.
        let x = random((1, 2, 9, 7), 5);
        let got = blur(&x).unwrap();
        let (n, c, h, w) = x.shape();
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..h {
                    for ox in 0..w {
                        let mut acc = 0.0;
                        for ty in 0..5 {
                            for tx in 0..5 {
                                let iy = reflect(oy as isize + ty as isize - 2, h);
                                let ix = reflect(ox as isize + tx as isize - 2, w);
                                acc += KERNEL[ty] * KERNEL[tx] * x.at(ni, ci, iy, ix);
                            }
                        }
                        assert!((got.at(ni, ci, oy, ox) - acc).abs() < 1e-15);
                    }
                }
            }
        }
        // A binary mask keeps exact ones in the interior of its on-region
        // (2-pixel margin, the kernel radius) — the dyadic taps sum to 1.
        let mut m = Tensor::<f64>::zeros(1, 1, 12, 12);
        for yy in 2..10 {
            for xx in 2..10 {
                *m.at_mut(0, 0, yy, xx) = 1.0;
            }
        }
        let f = blur(&m).unwrap();
        for yy in 4..8 {
            for xx in 4..8 {
                assert_eq!(f.at(0, 0, yy, xx), 1.0);
            }
        }
        // And the boundary is softened strictly between 0 and 1.
        assert!(f.at(0, 0, 2, 5) > 0.0 && f.at(0, 0, 2, 5) < 1.0);
        assert!(matches!(
            blur(&Tensor::<f64>::zeros(1, 1, 2, 8)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn decompose_then_reconstruct_is_near_exact() {
        let x = random((1, 3, 32, 48), 77);
        for depth in 1..=3 {
            let p = decompose(&x, depth).unwrap();
            assert_eq!(p.bands.len(), depth);
            let back = reconstruct(&p).unwrap();
            let err = back.sub(&x).max_abs_f64();
            assert!(err < 1e-12, "depth {depth}: max err {err}");
        }
    }

    #[test]
    fn decompose_rejects_bad_sizes() {
        let x = Tensor::<f64>::zeros(1, 3, 20, 20);
        // 20 not divisible by 8.
        assert!(matches!(decompose(&x, 3), Err(Error::Dimension(_))));
        // Depth 0 is meaningless.
        assert!(matches!(decompose(&x, 0), Err(Error::Argument(_))));
        // Residual would be 1 pixel.
        let tiny = Tensor::<f64>::zeros(1, 3, 8, 8);
        assert!(matches!(decompose(&tiny, 3), Err(Error::Dimension(_))));
    }

    #[test]
    fn reconstruct_names_the_malformed_level() {
        let x = random((1, 3, 32, 32), 5);
        let mut p = decompose(&x, 2).unwrap();
        p.bands[1] = Tensor::zeros(1, 3, 9, 9);
        match reconstruct(&p) {
            Err(Error::Structure(msg)) => assert!(msg.contains("band 1"), "{msg}"),
            other => panic!("expected structure error, got {other:?}"),
        }
    }

    #[test]
    fn blur_downsample_backward_is_the_exact_adjoint() {
        let x = random((1, 2, 12, 16), 8);
        let u = random((1, 2, 6, 8), 9);
        let ax = blur_downsample(&x).unwrap();
        let atu = blur_downsample_backward(&u, 12, 16);
        let lhs: f64 = ax.data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(atu.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn decompose_backward_is_the_exact_adjoint_of_the_linear_map() {
        // decompose is linear in the input, so <D x, (ub, ur)> == <x, D^T (ub, ur)>.
        let x = random((1, 1, 16, 16), 3);
        let p = decompose(&x, 2).unwrap();
        let ub: Vec<Tensor<f64>> = p
            .bands
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let (n, c, h, w) = b.shape();
                random((n, c, h, w), 100 + i as u64)
            })
            .collect();
        let ur = {
            let (n, c, h, w) = p.residual.shape();
            random((n, c, h, w), 200)
        };
        let mut lhs = 0.0;
        for (b, u) in p.bands.iter().zip(&ub) {
            lhs += b.data().iter().zip(u.data()).map(|(a, c)| a * c).sum::<f64>();
        }
        lhs += p.residual.data().iter().zip(ur.data()).map(|(a, c)| a * c).sum::<f64>();
        let gx = decompose_backward(&ub, &ur);
        let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, c)| a * c).sum();
        assert!((lhs - rhs).abs() < 1e-11, "{lhs} vs {rhs}");
    }

    #[test]
    fn reconstruct_backward_is_the_exact_adjoint() {
        let x = random((1, 1, 16, 16), 4);
        let p = decompose(&x, 2).unwrap();
        let u = random((1, 1, 16, 16), 5);
        let y = reconstruct(&p).unwrap();
        let lhs: f64 = y.data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
        let (gbands, gres) = reconstruct_backward(&u, 2);
        let mut rhs = 0.0;
        for (b, g) in p.bands.iter().zip(&gbands) {
            rhs += b.data().iter().zip(g.data()).map(|(a, c)| a * c).sum::<f64>();
        }
        rhs += p.residual.data().iter().zip(gres.data()).map(|(a, c)| a * c).sum::<f64>();
        assert!((lhs - rhs).abs() < 1e-11, "{lhs} vs {rhs}");
    }
}
