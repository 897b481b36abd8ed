//! Image quality metrics, sharing constants and windowing with the loss
//! definitions so training logs and evaluation reports agree.

use crate::error::Result;
use crate::losses::{mse_loss, ssim_mean};
use crate::scalar::Real;
use crate::tensor::Tensor;
use alloc::vec::Vec;

/// Peak signal-to-noise ratio in dB against a peak of 1.0. Identical images
/// return the `+inf` sentinel.
pub fn psnr<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<f64> {
    let mse = mse_loss(a, b)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * libm::log10(1.0 / mse))
}

/// Mean structural similarity (1 is a perfect match). The loss counterpart
/// is `1 -` this value.
pub fn ssim<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<f64> {
    ssim_mean(a, b)
}

/// Quality scores for one image pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub psnr: f64,
    pub ssim: f64,
}

/// Scores for a set of pairs plus their means. `mean_psnr` is `+inf` when
/// any pair is identical, mirroring the sentinel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub per_image: Vec<PairScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl MetricsReport {
    pub fn from_scores(per_image: Vec<PairScore>) -> Self {
        let n = per_image.len().max(1) as f64;
        let mean_psnr = per_image.iter().map(|s| s.psnr).sum::<f64>() / n;
        let mean_ssim = per_image.iter().map(|s| s.ssim).sum::<f64>() / n;
        MetricsReport {
            per_image,
            mean_psnr,
            mean_ssim,
        }
    }
}

/// Score one restored/reference pair.
pub fn score_pair<F: Real>(out: &Tensor<F>, gt: &Tensor<F>) -> Result<PairScore> {
    Ok(PairScore {
        psnr: psnr(out, gt)?,
        ssim: ssim(out, gt)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::SSIM_C1;

    fn image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = crate::rng::Rng::new(seed);
        let mut t = Tensor::zeros(1, 3, h, w);
        for v in t.data_mut() {
            *v = rng.uniform(0.0, 1.0);
        }
        t
    }

    #[test]
    fn psnr_closed_form_and_sentinel() {
        // Constant offset 0.1 -> MSE 0.01 -> 20 dB.
        let a = Tensor::<f64>::filled(1, 3, 8, 8, 0.25);
        let b = Tensor::<f64>::filled(1, 3, 8, 8, 0.35);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        // Identical images hit the sentinel.
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        // Cross-check against the loss definition on a random pair.
        let (x, y) = (image(12, 12, 1), image(12, 12, 2));
        let want = 10.0 * libm::log10(1.0 / mse_loss(&x, &y).unwrap());
        assert_eq!(psnr(&x, &y).unwrap(), want);
    }

    #[test]
    fn ssim_agrees_with_the_loss_definition() {
        let (x, y) = (image(16, 16, 3), image(16, 16, 4));
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
        assert_eq!(
            1.0 - ssim(&x, &y).unwrap(),
            crate::losses::ssim_loss(&x, &y).unwrap()
        );
        assert_eq!(ssim(&x, &y).unwrap(), ssim(&y, &x).unwrap());
        // Constant-image closed form, shared constants.
        let c5 = Tensor::<f64>::filled(1, 1, 11, 11, 0.5);
        let c6 = Tensor::<f64>::filled(1, 1, 11, 11, 0.6);
        let want = (2.0 * 0.6 * 0.5 + SSIM_C1) / (0.36 + 0.25 + SSIM_C1);
        assert!((ssim(&c6, &c5).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn report_aggregates_means() {
        let r = MetricsReport::from_scores(alloc::vec![
            PairScore { psnr: 20.0, ssim: 0.9 },
            PairScore { psnr: 30.0, ssim: 0.7 },
        ]);
        assert_eq!(r.per_image.len(), 2);
        assert_eq!(r.mean_psnr, 25.0);
        assert!((r.mean_ssim - 0.8).abs() < 1e-15);
        // An identical pair drags the mean to the sentinel, by design.
        let r2 = MetricsReport::from_scores(alloc::vec![
            PairScore { psnr: f64::INFINITY, ssim: 1.0 },
            PairScore { psnr: 30.0, ssim: 0.7 },
        ]);
        assert_eq!(r2.mean_psnr, f64::INFINITY);
    }
}
