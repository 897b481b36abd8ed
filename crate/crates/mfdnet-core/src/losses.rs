//! Training objective: pixel error, structural similarity, and perceptual
//! distance, combined with fixed weights.
//!
//! All scalar reductions run in `f64` with a fixed accumulation order
//! regardless of the tensor element type, so loss histories are reproducible
//! bit for bit. Gradients are returned in the tensor's own element type.
//!
//! The structural term uses the standard 11x11 Gaussian window (sigma 1.5,
//! stabilizers C1 = 0.01^2, C2 = 0.03^2 on the [0,1] range) over valid
//! window positions, per channel, averaged. Its backward pass is derived in
//! closed form and expressed as three adjoint filter passes, so it costs
//! about the same as the forward pass.
//!
//! The perceptual term compares feature maps from a fixed, seed-determined
//! strided-convolution extractor. A learned pretrained extractor is an
//! external asset; the functions take the extractor as a parameter so one
//! can be substituted without touching the loss code. Each layer's squared
//! distance is normalized by its element count to keep the term's scale
//! independent of extractor width.
//!
//! Zero-weighted terms are skipped entirely — setting `lambda_s = 0` both
//! saves the work and lifts the structural term's minimum-image-size
//! requirement.

use crate::error::{Error, Result};
use crate::nn::act::{gelu, gelu_backward};
use crate::nn::{Conv2d, Init};
use crate::scalar::Real;
use crate::tensor::Tensor;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Term weights for the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_m: f64,
    pub lambda_s: f64,
    pub lambda_p: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_m: 1.0,
            lambda_s: 0.3,
            lambda_p: 0.7,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_m", self.lambda_m),
            ("lambda_s", self.lambda_s),
            ("lambda_p", self.lambda_p),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// The weighted sum, in a fixed evaluation order.
    pub fn combine(&self, mse: f64, ssim: f64, perceptual: f64) -> f64 {
        self.lambda_m * mse + self.lambda_s * ssim + self.lambda_p * perceptual
    }
}

/// Per-term values for logging, plus their weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub mse: f64,
    pub ssim: f64,
    pub perceptual: f64,
    pub total: f64,
}

fn check_same_shape<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dimension(format!(
            "loss operands have different shapes: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean squared error over every element.
pub fn mse_loss<F: Real>(out: &Tensor<F>, gt: &Tensor<F>) -> Result<f64> {
    check_same_shape(out, gt)?;
    let mut acc = 0.0f64;
    for (a, b) in out.data().iter().zip(gt.data()) {
        let d = a.to_f64() - b.to_f64();
        acc += d * d;
    }
    Ok(acc / out.numel() as f64)
}

/// Gradient of `scale * mse_loss` with respect to `out`.
pub fn mse_loss_backward<F: Real>(out: &Tensor<F>, gt: &Tensor<F>, scale: f64) -> Tensor<F> {
    let k = 2.0 * scale / out.numel() as f64;
    let mut g = out.zeros_like();
    for ((d, a), b) in g.data_mut().iter_mut().zip(out.data()).zip(gt.data()) {
        *d = F::from_f64(k * (a.to_f64() - b.to_f64()));
    }
    g
}

/// Normalized Gaussian window taps.
fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut t = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in t.iter_mut().enumerate() {
        *v = libm::exp(-(i as f64 - c) * (i as f64 - c) / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
        sum += *v;
    }
    for v in t.iter_mut() {
        *v /= sum;
    }
    t
}

/// Separable valid-position correlation with the Gaussian window.
/// Input (h, w) row-major, output (h-10, w-10).
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ho, wo) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut tmp = vec![0.0f64; h * wo];
    for y in 0..h {
        let row = &x[y * w..(y + 1) * w];
        for ox in 0..wo {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * row[ox + k];
            }
            tmp[y * wo + ox] = acc;
        }
    }
    let mut out = vec![0.0f64; ho * wo];
    for oy in 0..ho {
        for ox in 0..wo {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * tmp[(oy + k) * wo + ox];
            }
            out[oy * wo + ox] = acc;
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatter window-position values back onto the
/// input grid.
fn filter_valid_adjoint(
    g: &[f64],
    h: usize,
    w: usize,
    taps: &[f64; SSIM_WINDOW],
) -> Vec<f64> {
    let (ho, wo) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut tmp = vec![0.0f64; h * wo];
    for oy in 0..ho {
        for ox in 0..wo {
            let v = g[oy * wo + ox];
            for (k, t) in taps.iter().enumerate() {
                tmp[(oy + k) * wo + ox] += t * v;
            }
        }
    }
    let mut out = vec![0.0f64; h * w];
    for y in 0..h {
        let row = &mut out[y * w..(y + 1) * w];
        for ox in 0..wo {
            let v = tmp[y * wo + ox];
            for (k, t) in taps.iter().enumerate() {
                row[ox + k] += t * v;
            }
        }
    }
    out
}

fn check_ssim_dims<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    check_same_shape(a, b)?;
    let (_, _, h, w) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dimension(format!(
            "structural similarity needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Mean structural similarity over all valid window positions, channels, and
/// batch entries. Shared by the loss and the evaluation metric.
pub fn ssim_mean<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<f64> {
    check_ssim_dims(a, b)?;
    let taps = gaussian_taps();
    let (n, c, h, w) = a.shape();
    let (ho, wo) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut acc = 0.0f64;
    let mut plane_x = vec![0.0f64; h * w];
    let mut plane_y = vec![0.0f64; h * w];
    let mut plane_xx = vec![0.0f64; h * w];
    let mut plane_yy = vec![0.0f64; h * w];
    let mut plane_xy = vec![0.0f64; h * w];
    for ni in 0..n {
        for ci in 0..c {
            for yy in 0..h {
                for xx in 0..w {
                    let i = yy * w + xx;
                    let xv = a.at(ni, ci, yy, xx).to_f64();
                    let yv = b.at(ni, ci, yy, xx).to_f64();
                    plane_x[i] = xv;
                    plane_y[i] = yv;
                    plane_xx[i] = xv * xv;
                    plane_yy[i] = yv * yv;
                    plane_xy[i] = xv * yv;
                }
            }
            let mx = filter_valid(&plane_x, h, w, &taps);
            let my = filter_valid(&plane_y, h, w, &taps);
            let mxx = filter_valid(&plane_xx, h, w, &taps);
            let myy = filter_valid(&plane_yy, h, w, &taps);
            let mxy = filter_valid(&plane_xy, h, w, &taps);
            for i in 0..ho * wo {
                let (ux, uy) = (mx[i], my[i]);
                let vx = mxx[i] - ux * ux;
                let vy = myy[i] - uy * uy;
                let vxy = mxy[i] - ux * uy;
                let a1 = 2.0 * (ux * uy) + SSIM_C1;
                let a2 = 2.0 * vxy + SSIM_C2;
                let b1 = ux * ux + uy * uy + SSIM_C1;
                let b2 = vx + vy + SSIM_C2;
                acc += (a1 * a2) / (b1 * b2);
            }
        }
    }
    Ok(acc / (n * c * ho * wo) as f64)
}

/// `1 - ssim_mean`: zero for identical images.
pub fn ssim_loss<F: Real>(out: &Tensor<F>, gt: &Tensor<F>) -> Result<f64> {
    Ok(1.0 - ssim_mean(out, gt)?)
}

/// Gradient of `scale * ssim_loss` with respect to `out`.
///
/// With per-window statistics u = mean, v = variance, vxy = covariance and
/// S = (2 u_x u_y + C1)(2 vxy + C2) / ((u_x^2 + u_y^2 + C1)(v_x + v_y + C2)),
/// the chain rule through the filtered moments gives, per input pixel i,
///
/// ```text
/// dS/dx_i = corr(w, dS/du_x - 2 x_window-mean terms) ...
/// ```
///
/// concretely: dS/dx_i = [w * (c_u - 2 c_v u_x - c_c u_y)](i)
///                       + x_i [w * 2 c_v](i) + y_i [w * c_c](i)
/// where c_u = dS/du_x, c_v = dS/dv_x, c_c = dS/dvxy as window fields and
/// `w *` is the adjoint of the valid filtering.
pub fn ssim_loss_backward<F: Real>(
    out: &Tensor<F>,
    gt: &Tensor<F>,
    scale: f64,
) -> Result<Tensor<F>> {
    check_ssim_dims(out, gt)?;
    let taps = gaussian_taps();
    let (n, c, h, w) = out.shape();
    let (ho, wo) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    // d(loss)/dS at each window: -scale / count.
    let dl_ds = -scale / (n * c * ho * wo) as f64;
    let mut g = out.zeros_like();
    let mut plane_x = vec![0.0f64; h * w];
    let mut plane_y = vec![0.0f64; h * w];
    let mut plane_xx = vec![0.0f64; h * w];
    let mut plane_yy = vec![0.0f64; h * w];
    let mut plane_xy = vec![0.0f64; h * w];
    for ni in 0..n {
        for ci in 0..c {
            for yy in 0..h {
                for xx in 0..w {
                    let i = yy * w + xx;
                    let xv = out.at(ni, ci, yy, xx).to_f64();
                    let yv = gt.at(ni, ci, yy, xx).to_f64();
                    plane_x[i] = xv;
                    plane_y[i] = yv;
                    plane_xx[i] = xv * xv;
                    plane_yy[i] = yv * yv;
                    plane_xy[i] = xv * yv;
                }
            }
            let mx = filter_valid(&plane_x, h, w, &taps);
            let my = filter_valid(&plane_y, h, w, &taps);
            let mxx = filter_valid(&plane_xx, h, w, &taps);
            let myy = filter_valid(&plane_yy, h, w, &taps);
            let mxy = filter_valid(&plane_xy, h, w, &taps);
            // Window-position coefficient fields.
            let mut f_const = vec![0.0f64; ho * wo];
            let mut f_x = vec![0.0f64; ho * wo];
            let mut f_y = vec![0.0f64; ho * wo];
            for i in 0..ho * wo {
                let (ux, uy) = (mx[i], my[i]);
                let vx = mxx[i] - ux * ux;
                let vy = myy[i] - uy * uy;
                let vxy = mxy[i] - ux * uy;
                let a1 = 2.0 * (ux * uy) + SSIM_C1;
                let a2 = 2.0 * vxy + SSIM_C2;
                let b1 = ux * ux + uy * uy + SSIM_C1;
                let b2 = vx + vy + SSIM_C2;
                let ds_dux = 2.0 * (uy * a2 * b1 - ux * a1 * a2) / (b1 * b1 * b2);
                let ds_dvx = -(a1 * a2) / (b1 * b2 * b2);
                let ds_dvxy = 2.0 * a1 / (b1 * b2);
                let cu = dl_ds * ds_dux;
                let cv = dl_ds * ds_dvx;
                let cc = dl_ds * ds_dvxy;
                f_const[i] = cu - 2.0 * cv * ux - cc * uy;
                f_x[i] = 2.0 * cv;
                f_y[i] = cc;
            }
            let s_const = filter_valid_adjoint(&f_const, h, w, &taps);
            let s_x = filter_valid_adjoint(&f_x, h, w, &taps);
            let s_y = filter_valid_adjoint(&f_y, h, w, &taps);
            for yy in 0..h {
                for xx in 0..w {
                    let i = yy * w + xx;
                    let v = s_const[i] + plane_x[i] * s_x[i] + plane_y[i] * s_y[i];
                    *g.at_mut(ni, ci, yy, xx) = F::from_f64(v);
                }
            }
        }
    }
    Ok(g)
}

/// A fixed, seed-determined feature extractor: three stride-2 3x3
/// convolutions with GELU, widening 3 -> 8 -> 16 -> 32. Its parameters are
/// never trained; two extractors built from the same seed are identical.
pub struct FeatureExtractor<F> {
    stages: Vec<Conv2d<F>>,
    pub seed: u64,
}

pub const FEATURE_WIDTHS: [usize; 3] = [8, 16, 32];

impl<F: Real> FeatureExtractor<F> {
    pub fn new(seed: u64) -> Self {
        let mut stages = Vec::new();
        let mut cin = 3;
        for (i, &cout) in FEATURE_WIDTHS.iter().enumerate() {
            stages.push(Conv2d::new(
                &format!("percept.stage{i}"),
                cin,
                cout,
                3,
                2,
                1,
                1,
                1,
                true,
                Init::FanInUniform,
                seed,
            ));
            cin = cout;
        }
        FeatureExtractor { stages, seed }
    }

    /// The degenerate extractor whose single "feature map" is the image
    /// itself; with it the perceptual term reduces to plain MSE.
    pub fn identity() -> Self {
        FeatureExtractor {
            stages: Vec::new(),
            seed: 0,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.stages.len().max(1)
    }

    /// Feature maps, one per stage (or the image itself for the identity
    /// extractor).
    pub fn features(&self, x: &Tensor<F>) -> Vec<Tensor<F>> {
        if self.stages.is_empty() {
            return vec![x.clone()];
        }
        let mut maps = Vec::with_capacity(self.stages.len());
        let mut cur = x.clone();
        for conv in &self.stages {
            cur = gelu(&conv.forward(&cur));
            maps.push(cur.clone());
        }
        maps
    }

    /// Backpropagate per-layer feature gradients to an input-image gradient.
    /// Extractor parameters stay untouched (they are not trained), so the
    /// convolutions are cloned for the duration of the backward pass.
    pub fn input_gradient(&self, x: &Tensor<F>, g_feats: &[Tensor<F>]) -> Tensor<F> {
        assert_eq!(g_feats.len(), self.layer_count());
        if self.stages.is_empty() {
            return g_feats[0].clone();
        }
        // Re-run the forward pass keeping pre-activations and stage inputs.
        let mut inputs = Vec::with_capacity(self.stages.len());
        let mut pres = Vec::with_capacity(self.stages.len());
        let mut cur = x.clone();
        for conv in &self.stages {
            let pre = conv.forward(&cur);
            inputs.push(cur);
            cur = gelu(&pre);
            pres.push(pre);
        }
        let mut g = g_feats[self.stages.len() - 1].clone();
        for i in (0..self.stages.len()).rev() {
            let g_pre = gelu_backward(&pres[i], &g);
            g = self.stages[i].clone().backward(&inputs[i], &g_pre);
            if i > 0 {
                g.add_assign(&g_feats[i - 1]);
            }
        }
        g
    }
}

/// Sum over layers of the mean squared feature distance.
pub fn perceptual_loss<F: Real>(
    out: &Tensor<F>,
    gt: &Tensor<F>,
    fx: &FeatureExtractor<F>,
) -> Result<f64> {
    check_same_shape(out, gt)?;
    let fa = fx.features(out);
    let fb = fx.features(gt);
    let mut total = 0.0f64;
    for (a, b) in fa.iter().zip(&fb) {
        let mut acc = 0.0f64;
        for (x, y) in a.data().iter().zip(b.data()) {
            let d = x.to_f64() - y.to_f64();
            acc += d * d;
        }
        total += acc / a.numel() as f64;
    }
    Ok(total)
}

/// Gradient of `scale * perceptual_loss` with respect to `out`.
pub fn perceptual_loss_backward<F: Real>(
    out: &Tensor<F>,
    gt: &Tensor<F>,
    fx: &FeatureExtractor<F>,
    scale: f64,
) -> Result<Tensor<F>> {
    check_same_shape(out, gt)?;
    let fa = fx.features(out);
    let fb = fx.features(gt);
    let g_feats: Vec<Tensor<F>> = fa
        .iter()
        .zip(&fb)
        .map(|(a, b)| {
            let k = 2.0 * scale / a.numel() as f64;
            let mut g = a.zeros_like();
            for ((d, x), y) in g.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
                *d = F::from_f64(k * (x.to_f64() - y.to_f64()));
            }
            g
        })
        .collect();
    Ok(fx.input_gradient(out, &g_feats))
}

/// The combined objective with its per-term breakdown. Terms with zero
/// weight are skipped (and report 0).
pub fn total_loss<F: Real>(
    out: &Tensor<F>,
    gt: &Tensor<F>,
    fx: &FeatureExtractor<F>,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    w.validate()?;
    let mse = if w.lambda_m != 0.0 { mse_loss(out, gt)? } else { 0.0 };
    let ssim = if w.lambda_s != 0.0 { ssim_loss(out, gt)? } else { 0.0 };
    let perceptual = if w.lambda_p != 0.0 {
        perceptual_loss(out, gt, fx)?
    } else {
        0.0
    };
    Ok(LossBreakdown {
        mse,
        ssim,
        perceptual,
        total: w.combine(mse, ssim, perceptual),
    })
}

/// [`total_loss`] plus its gradient with respect to `out`.
pub fn total_loss_with_gradient<F: Real>(
    out: &Tensor<F>,
    gt: &Tensor<F>,
    fx: &FeatureExtractor<F>,
    w: &LossWeights,
) -> Result<(LossBreakdown, Tensor<F>)> {
    let breakdown = total_loss(out, gt, fx, w)?;
    let mut g = out.zeros_like();
    if w.lambda_m != 0.0 {
        g.add_assign(&mse_loss_backward(out, gt, w.lambda_m));
    }
    if w.lambda_s != 0.0 {
        g.add_assign(&ssim_loss_backward(out, gt, w.lambda_s)?);
    }
    if w.lambda_p != 0.0 {
        g.add_assign(&perceptual_loss_backward(out, gt, fx, w.lambda_p)?);
    }
    Ok((breakdown, g))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = crate::rng::Rng::new(seed);
        let mut t = Tensor::zeros(n, c, h, w);
        for v in t.data_mut() {
            *v = rng.uniform(0.0, 1.0);
        }
        t
    }

    #[test]
    fn mse_closed_forms() {
        let gt = image(1, 3, 8, 8, 1);
        assert_eq!(mse_loss(&gt, &gt).unwrap(), 0.0);
        let mut out = Tensor::filled(1, 3, 8, 8, 0.25);
        let base = Tensor::filled(1, 3, 8, 8, 0.35);
        // Constant offset 0.1 -> 0.01 up to representation of 0.35 - 0.25.
        assert!((mse_loss(&out, &base).unwrap() - 0.01).abs() < 1e-15);
        // Scalar oracle on a random pair.
        let r = image(1, 3, 8, 8, 2);
        let mut want = 0.0;
        for (a, b) in gt.data().iter().zip(r.data()) {
            want += (a - b) * (a - b);
        }
        want /= gt.numel() as f64;
        assert!((mse_loss(&gt, &r).unwrap() - want).abs() < 1e-15);
        // Symmetry is exact.
        assert_eq!(mse_loss(&gt, &r).unwrap(), mse_loss(&r, &gt).unwrap());
        // Shape mismatch rejected.
        out = Tensor::zeros(1, 3, 8, 4);
        assert!(matches!(mse_loss(&out, &gt), Err(Error::Dimension(_))));
    }

    #[test]
    fn ssim_identity_constants_and_symmetry() {
        let a = image(1, 3, 16, 16, 3);
        // Identical images: every window scores exactly 1.
        assert_eq!(ssim_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(ssim_mean(&a, &a).unwrap(), 1.0);
        // Constant images: variances vanish, closed form remains.
        let x = Tensor::<f64>::filled(1, 1, 12, 12, 0.6);
        let y = Tensor::<f64>::filled(1, 1, 12, 12, 0.5);
        let want = (2.0 * 0.6 * 0.5 + SSIM_C1) / (0.6 * 0.6 + 0.5 * 0.5 + SSIM_C1);
        assert!((ssim_mean(&x, &y).unwrap() - want).abs() < 1e-12);
        assert!((ssim_loss(&x, &y).unwrap() - (1.0 - want)).abs() < 1e-12);
        // Bitwise symmetric.
        let b = image(1, 3, 16, 16, 4);
        assert_eq!(ssim_mean(&a, &b).unwrap(), ssim_mean(&b, &a).unwrap());
        // Bounded to [-1, 1], loss non-negative.
        let s = ssim_mean(&a, &b).unwrap();
        assert!((-1.0..=1.0).contains(&s));
        assert!(ssim_loss(&a, &b).unwrap() >= 0.0);
        // Too small for the window.
        let small = Tensor::<f64>::zeros(1, 1, 10, 16);
        assert!(matches!(
            ssim_loss(&small, &small),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let out = image(1, 2, 13, 14, 5);
        let gt = image(1, 2, 13, 14, 6);
        let g = ssim_loss_backward(&out, &gt, 1.0).unwrap();
        let eps = 1e-5;
        for i in (0..out.numel()).step_by(23) {
            let mut p = out.clone();
            p.data_mut()[i] += eps;
            let mut m = out.clone();
            m.data_mut()[i] -= eps;
            let fd =
                (ssim_loss(&p, &gt).unwrap() - ssim_loss(&m, &gt).unwrap()) / (2.0 * eps);
            let got = g.data()[i];
            assert!(
                (fd - got).abs() < 1e-6 * fd.abs().max(1.0),
                "grad[{i}]: fd {fd} vs {got}"
            );
        }
    }

    #[test]
    fn perceptual_identity_extractor_reduces_to_mse() {
        let a = image(1, 3, 8, 8, 7);
        let b = image(1, 3, 8, 8, 8);
        let fx = FeatureExtractor::identity();
        assert_eq!(
            perceptual_loss(&a, &b, &fx).unwrap(),
            mse_loss(&a, &b).unwrap()
        );
        // And its gradient is exactly the MSE gradient.
        let g = perceptual_loss_backward(&a, &b, &fx, 0.7).unwrap();
        assert_eq!(g, mse_loss_backward(&a, &b, 0.7));
    }

    #[test]
    fn extractor_is_seed_deterministic() {
        let a = image(1, 3, 16, 16, 9);
        let f1 = FeatureExtractor::<f64>::new(123).features(&a);
        let f2 = FeatureExtractor::<f64>::new(123).features(&a);
        let f3 = FeatureExtractor::<f64>::new(124).features(&a);
        assert_eq!(f1.len(), 3);
        // Strides halve the extent at each stage.
        assert_eq!(f1[0].shape(), (1, 8, 8, 8));
        assert_eq!(f1[1].shape(), (1, 16, 4, 4));
        assert_eq!(f1[2].shape(), (1, 32, 2, 2));
        for (x, y) in f1.iter().zip(&f2) {
            assert_eq!(x, y);
        }
        assert_ne!(f1[0], f3[0]);
        // Identical inputs score zero.
        let fx = FeatureExtractor::<f64>::new(123);
        assert_eq!(perceptual_loss(&a, &a, &fx).unwrap(), 0.0);
        assert!(perceptual_loss(&a, &image(1, 3, 16, 16, 10), &fx).unwrap() > 0.0);
    }

    #[test]
    fn weights_defaults_and_stub_combination() {
        let w = LossWeights::default();
        assert_eq!((w.lambda_m, w.lambda_s, w.lambda_p), (1.0, 0.3, 0.7));
        // Unit terms expose the weights: 1 + 0.3 + 0.7 is exactly 2.
        assert_eq!(w.combine(1.0, 1.0, 1.0), 2.0);
        assert!(LossWeights {
            lambda_s: -0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn total_loss_of_identical_images_is_exactly_zero() {
        let x = image(2, 3, 16, 16, 11);
        let fx = FeatureExtractor::new(1);
        let b = total_loss(&x, &x, &fx, &LossWeights::default()).unwrap();
        assert_eq!(b.mse, 0.0);
        assert_eq!(b.ssim, 0.0);
        assert_eq!(b.perceptual, 0.0);
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn total_gradient_matches_finite_differences() {
        // 12x12: the smallest even size the 11x11 structural window admits.
        let out = image(1, 3, 12, 12, 13);
        let gt = image(1, 3, 12, 12, 14);
        let fx = FeatureExtractor::new(2);
        let w = LossWeights::default();
        let (b, g) = total_loss_with_gradient(&out, &gt, &fx, &w).unwrap();
        assert!(b.total > 0.0);
        let eps = 1e-4;
        for i in (0..out.numel()).step_by(19) {
            let mut p = out.clone();
            p.data_mut()[i] += eps;
            let mut m = out.clone();
            m.data_mut()[i] -= eps;
            let fd = (total_loss(&p, &gt, &fx, &w).unwrap().total
                - total_loss(&m, &gt, &fx, &w).unwrap().total)
                / (2.0 * eps);
            let got = g.data()[i];
            assert!(
                (fd - got).abs() < 1e-3 * fd.abs().max(1e-2),
                "grad[{i}]: fd {fd} vs {got}"
            );
        }
        // Zero structural weight lifts the window-size floor: 8x8 works.
        let small_out = image(1, 3, 8, 8, 15);
        let small_gt = image(1, 3, 8, 8, 16);
        let w2 = LossWeights {
            lambda_s: 0.0,
            ..Default::default()
        };
        let (b2, g2) = total_loss_with_gradient(&small_out, &small_gt, &fx, &w2).unwrap();
        assert_eq!(b2.ssim, 0.0);
        for i in (0..small_out.numel()).step_by(11) {
            let mut p = small_out.clone();
            p.data_mut()[i] += eps;
            let mut m = small_out.clone();
            m.data_mut()[i] -= eps;
            let fd = (total_loss(&p, &small_gt, &fx, &w2).unwrap().total
                - total_loss(&m, &small_gt, &fx, &w2).unwrap().total)
                / (2.0 * eps);
            let got = g2.data()[i];
            assert!(
                (fd - got).abs() < 1e-3 * fd.abs().max(1e-2),
                "8x8 grad[{i}]: fd {fd} vs {got}"
            );
        }
    }
}
