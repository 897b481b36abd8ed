//! Synthetic flare-pair generation, augmentation, and deterministic sampling.
//!
//! A training pair is a flare-free base image and the same image corrupted by
//! a flare asset. Corruption is additive in linear light: both images are
//! gamma-decoded, summed, clipped, and re-encoded. Per-pixel short circuits
//! keep the degenerate cases exact: where the flare contributes nothing the
//! base value passes through untouched (no decode/encode round trip), and
//! where the base is black the flare value does.
//!
//! Flare assets are augmented with a single composed affine warp (rotation,
//! shear, scale, flips about the image center, then translation) sampled
//! bilinearly with zero fill outside the frame. Quadrant rotations use exact
//! sine/cosine values so axis-aligned warps are index permutations, not
//! resampling approximations.
//!
//! [`PairSampler`] turns in-memory assets into a deterministic pair stream:
//! sample `i` is a pure function of `(seed, i)`, so any prefetch order
//! delivers the single-worker sequence. Procedural generators for bases and
//! flare assets (radial streaks and glow blobs for scattering, ghost trains
//! for reflective) make the pipeline self-contained; externally sourced
//! assets follow the same in-memory contract. File decoding and directory
//! walking live in the companion crate.

use crate::error::{Error, Result};
use crate::nn::resize::bilinear_resize;
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::Tensor;
use alloc::format;
use alloc::vec::Vec;

/// Inclusive bounds for the compositing gamma, drawn per sample.
pub const GAMMA_MIN: f64 = 1.8;
pub const GAMMA_MAX: f64 = 2.6;

/// Which optical path produced a flare asset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlareKind {
    /// Forward-scattered light: radial streaks plus a central glow.
    Scattering,
    /// Inter-element reflections: a train of ghost blobs through the center.
    Reflective,
}

/// An RGB flare layer in `[0, 1]`, mostly dark background.
#[derive(Debug, Clone)]
pub struct FlareAsset<F: Real> {
    pub image: Tensor<F>,
    pub kind: FlareKind,
}

impl<F: Real> FlareAsset<F> {
    pub fn new(image: Tensor<F>, kind: FlareKind) -> Result<Self> {
        expect_unit_rgb(&image, "flare asset")?;
        Ok(FlareAsset { image, kind })
    }
}

fn expect_unit_rgb<F: Real>(image: &Tensor<F>, what: &str) -> Result<()> {
    let (n, c, h, w) = image.shape();
    if n != 1 || c != 3 || h == 0 || w == 0 {
        return Err(Error::dimension(format!(
            "{what} must be a single RGB image, got {n}x{c}x{h}x{w}"
        )));
    }
    for &v in image.data() {
        let v = v.to_f64();
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::argument(format!(
                "{what} values must lie in [0, 1], found {v}"
            )));
        }
    }
    Ok(())
}

/// One draw of the augmentation transform. Angles are degrees, translation
/// is in pixels of the asset being warped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub translate_x: f64,
    pub translate_y: f64,
    pub shear_deg: f64,
    pub scale: f64,
    pub flip_h: bool,
    pub flip_v: bool,
}

impl AugmentParams {
    /// The transform that leaves the asset bitwise unchanged.
    pub fn identity() -> Self {
        AugmentParams {
            rotation_deg: 0.0,
            translate_x: 0.0,
            translate_y: 0.0,
            shear_deg: 0.0,
            scale: 1.0,
            flip_h: false,
            flip_v: false,
        }
    }

    /// Draw parameters uniformly from the documented ranges for an asset of
    /// extent `(h, w)`.
    pub fn sample(rng: &mut Rng, h: usize, w: usize) -> Self {
        AugmentParams {
            rotation_deg: rng.uniform(0.0, 360.0),
            translate_x: rng.uniform(-0.25, 0.25) * w as f64,
            translate_y: rng.uniform(-0.25, 0.25) * h as f64,
            shear_deg: rng.uniform(-20.0, 20.0),
            scale: rng.uniform(0.8, 1.5),
            flip_h: rng.flip(),
            flip_v: rng.flip(),
        }
    }

    /// Range check against an asset of extent `(h, w)`: rotation in
    /// [0, 360), |translation| at most a quarter of the extent, shear in
    /// [-20, 20] degrees, scale in [0.8, 1.5].
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        let fail = |what: &str, v: f64| {
            Err(Error::argument(format!("augmentation {what} out of range: {v}")))
        };
        if !(0.0..360.0).contains(&self.rotation_deg) {
            return fail("rotation", self.rotation_deg);
        }
        if libm::fabs(self.translate_x) > 0.25 * w as f64 {
            return fail("x translation", self.translate_x);
        }
        if libm::fabs(self.translate_y) > 0.25 * h as f64 {
            return fail("y translation", self.translate_y);
        }
        if !(-20.0..=20.0).contains(&self.shear_deg) {
            return fail("shear", self.shear_deg);
        }
        if !(0.8..=1.5).contains(&self.scale) {
            return fail("scale", self.scale);
        }
        Ok(())
    }
}

/// Sine and cosine of an angle in degrees, exact at quadrant multiples so
/// axis-aligned rotations stay index permutations.
fn sincos_deg(deg: f64) -> (f64, f64) {
    let r = deg - 360.0 * libm::floor(deg / 360.0);
    match r {
        0.0 => (0.0, 1.0),
        90.0 => (1.0, 0.0),
        180.0 => (0.0, -1.0),
        270.0 => (-1.0, 0.0),
        _ => {
            let rad = r * core::f64::consts::PI / 180.0;
            (libm::sin(rad), libm::cos(rad))
        }
    }
}

type Mat2 = [[f64; 2]; 2];

fn mat_mul(a: Mat2, b: Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

fn mat_inv(a: Mat2) -> Mat2 {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [
        [a[1][1] / det, -a[0][1] / det],
        [-a[1][0] / det, a[0][0] / det],
    ]
}

/// Bilinear sample of one channel plane at `(sx, sy)`, zero outside the frame.
fn sample_zero_fill<F: Real>(plane: &[F], h: usize, w: usize, sx: f64, sy: f64) -> F {
    let x0 = libm::floor(sx);
    let y0 = libm::floor(sy);
    let fx = sx - x0;
    let fy = sy - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let at = |y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            plane[y as usize * w + x as usize].to_f64()
        }
    };
    let top = (1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1);
    let bot = (1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1);
    F::from_f64((1.0 - fy) * top + fy * bot)
}

/// Warp a flare asset with one composed affine transform: flips, scale,
/// shear, and rotation about the image center, then translation. Sampling is
/// bilinear with zero fill, so energy never appears from outside the frame.
pub fn augment_flare<F: Real>(flare: &FlareAsset<F>, ap: &AugmentParams) -> Result<FlareAsset<F>> {
    let (_, c, h, w) = flare.image.shape();
    ap.validate(h, w)?;
    let (s, co) = sincos_deg(ap.rotation_deg);
    let rot = [[co, -s], [s, co]];
    let shear_t = if ap.shear_deg == 0.0 {
        0.0
    } else {
        libm::tan(ap.shear_deg * core::f64::consts::PI / 180.0)
    };
    let shear = [[1.0, shear_t], [0.0, 1.0]];
    let scale = [[ap.scale, 0.0], [0.0, ap.scale]];
    let flip = [
        [if ap.flip_h { -1.0 } else { 1.0 }, 0.0],
        [0.0, if ap.flip_v { -1.0 } else { 1.0 }],
    ];
    // Source -> destination: dst = A * (src - center) + center + translation.
    let a = mat_mul(mat_mul(rot, shear), mat_mul(scale, flip));
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let tx = cx - (a[0][0] * cx + a[0][1] * cy) + ap.translate_x;
    let ty = cy - (a[1][0] * cx + a[1][1] * cy) + ap.translate_y;
    let inv = mat_inv(a);
    let mut out = Tensor::zeros(1, c, h, w);
    for ci in 0..c {
        let plane = flare.image.plane(0, ci);
        for y in 0..h {
            let row = out.row_mut(0, ci, y);
            for (x, v) in row.iter_mut().enumerate() {
                let dx = x as f64 - tx;
                let dy = y as f64 - ty;
                let sx = inv[0][0] * dx + inv[0][1] * dy;
                let sy = inv[1][0] * dx + inv[1][1] * dy;
                *v = sample_zero_fill(plane, h, w, sx, sy);
            }
        }
    }
    Ok(FlareAsset {
        image: out,
        kind: flare.kind,
    })
}

/// Additive compositing in linear light:
/// `corrupted = clip(base^gamma + flare^gamma)^(1/gamma)`, `gt = base`.
///
/// Pixels where the flare is zero return the base value verbatim (and vice
/// versa for black base pixels); the continuous formula agrees there, and
/// skipping the round trip keeps those identities exact.
pub fn synthesize_pair<F: Real>(
    base: &Tensor<F>,
    flare: &Tensor<F>,
    gamma: f64,
) -> Result<(Tensor<F>, Tensor<F>)> {
    if !(GAMMA_MIN..=GAMMA_MAX).contains(&gamma) {
        return Err(Error::argument(format!(
            "gamma must lie in [{GAMMA_MIN}, {GAMMA_MAX}], got {gamma}"
        )));
    }
    if base.shape() != flare.shape() {
        return Err(Error::dimension(format!(
            "base and flare dimensions differ: {:?} vs {:?}",
            base.shape(),
            flare.shape()
        )));
    }
    expect_unit_rgb(base, "base image")?;
    expect_unit_rgb(flare, "flare image")?;
    let mut corrupted = base.clone();
    for (o, &f) in corrupted.data_mut().iter_mut().zip(flare.data()) {
        let fv = f.to_f64();
        if fv == 0.0 {
            continue;
        }
        let bv = o.to_f64();
        if bv == 0.0 {
            *o = f;
            continue;
        }
        let linear = libm::pow(bv, gamma) + libm::pow(fv, gamma);
        *o = if linear >= 1.0 {
            F::ONE
        } else {
            F::from_f64(libm::pow(linear, 1.0 / gamma))
        };
    }
    Ok((corrupted, base.clone()))
}

/// Per-sample gamma draw, uniform over the documented range.
pub fn draw_gamma(rng: &mut Rng) -> f64 {
    rng.uniform(GAMMA_MIN, GAMMA_MAX)
}

fn min_dim(h: usize, w: usize) -> f64 {
    h.min(w) as f64
}

/// Procedural flare asset: radial streaks plus glow blobs for scattering,
/// a ghost train through the center for reflective. Deterministic in `seed`.
pub fn generate_flare<F: Real>(kind: FlareKind, h: usize, w: usize, seed: u64) -> FlareAsset<F> {
    assert!(h > 0 && w > 0);
    let mut rng = Rng::from_label(seed, "asset.flare");
    let m = min_dim(h, w);
    let cx = w as f64 / 2.0 + rng.uniform(-0.125, 0.125) * w as f64;
    let cy = h as f64 / 2.0 + rng.uniform(-0.125, 0.125) * h as f64;
    let mut planes = alloc::vec![0.0f64; 3 * h * w];
    let splat = |color: [f64; 3], f: &dyn Fn(f64, f64) -> f64, planes: &mut [f64]| {
        for y in 0..h {
            for x in 0..w {
                let v = f(x as f64 - cx, y as f64 - cy);
                if v > 1e-4 {
                    for (ci, &k) in color.iter().enumerate() {
                        planes[ci * h * w + y * w + x] += k * v;
                    }
                }
            }
        }
    };
    // A central glow is common to both kinds.
    let glows = 2 + rng.below(3);
    for _ in 0..glows {
        let sx = rng.uniform(-0.05, 0.05) * m;
        let sy = rng.uniform(-0.05, 0.05) * m;
        let sigma = rng.uniform(m / 24.0, m / 8.0);
        let amp = rng.uniform(0.35, 0.8);
        let color = [1.0, rng.uniform(0.7, 0.95), rng.uniform(0.5, 0.85)];
        splat(
            color,
            &move |dx, dy| {
                let d2 = (dx - sx) * (dx - sx) + (dy - sy) * (dy - sy);
                amp * libm::exp(-d2 / (2.0 * sigma * sigma))
            },
            &mut planes,
        );
    }
    match kind {
        FlareKind::Scattering => {
            let streaks = 6 + rng.below(7);
            for _ in 0..streaks {
                let theta = rng.uniform(0.0, core::f64::consts::PI);
                let (st, ct) = (libm::sin(theta), libm::cos(theta));
                let width = rng.uniform(0.6, 1.8);
                let reach = rng.uniform(0.25, 0.55) * m;
                let amp = rng.uniform(0.25, 0.7);
                splat(
                    [1.0, 0.92, 0.8],
                    &move |dx, dy| {
                        let along = dx * ct + dy * st;
                        let perp = -dx * st + dy * ct;
                        amp * libm::exp(-(perp * perp) / (2.0 * width * width))
                            * libm::exp(-(along * along) / (2.0 * reach * reach))
                    },
                    &mut planes,
                );
            }
        }
        FlareKind::Reflective => {
            let ghosts = 3 + rng.below(4);
            let theta = rng.uniform(0.0, core::f64::consts::PI);
            let (st, ct) = (libm::sin(theta), libm::cos(theta));
            for _ in 0..ghosts {
                let t = rng.uniform(-0.45, 0.45) * m;
                let (gx, gy) = (t * ct, t * st);
                let radius = rng.uniform(m / 30.0, m / 9.0);
                let amp = rng.uniform(0.1, 0.35);
                splat(
                    [0.6, 0.75, 1.0],
                    &move |dx, dy| {
                        let d2 = (dx - gx) * (dx - gx) + (dy - gy) * (dy - gy);
                        let q = d2 / (radius * radius);
                        amp * libm::exp(-q * q)
                    },
                    &mut planes,
                );
            }
        }
    }
    let mut image = Tensor::zeros(1, 3, h, w);
    for (o, &v) in image.data_mut().iter_mut().zip(planes.iter()) {
        *o = F::from_f64(v.clamp(0.0, 1.0));
    }
    FlareAsset { image, kind }
}

/// Procedural nighttime base image: a dim sky gradient, block structures
/// with lit windows, and a few small bright lights. Deterministic in `seed`.
pub fn generate_base<F: Real>(h: usize, w: usize, seed: u64) -> Tensor<F> {
    assert!(h > 0 && w > 0);
    let mut rng = Rng::from_label(seed, "asset.base");
    let mut planes = alloc::vec![0.0f64; 3 * h * w];
    let sky_top = rng.uniform(0.02, 0.08);
    let sky_bottom = rng.uniform(0.08, 0.2);
    let tint = [rng.uniform(0.6, 0.9), rng.uniform(0.7, 1.0), 1.0];
    for y in 0..h {
        let lum = sky_top + (sky_bottom - sky_top) * y as f64 / (h.max(2) - 1) as f64;
        for x in 0..w {
            for (ci, &k) in tint.iter().enumerate() {
                planes[ci * h * w + y * w + x] = lum * k;
            }
        }
    }
    let blocks = 3 + rng.below(4);
    for _ in 0..blocks {
        let bw = 2 + rng.below((w as u64 / 2).max(1)) as usize;
        let bh = 2 + rng.below((h as u64 / 2).max(1)) as usize;
        let x0 = rng.below((w.saturating_sub(bw) + 1) as u64) as usize;
        let y0 = rng.below((h.saturating_sub(bh) + 1) as u64) as usize;
        let shade = rng.uniform(0.06, 0.35);
        let color = [
            shade * rng.uniform(0.8, 1.0),
            shade * rng.uniform(0.8, 1.0),
            shade * rng.uniform(0.8, 1.0),
        ];
        for y in y0..(y0 + bh).min(h) {
            for x in x0..(x0 + bw).min(w) {
                for (ci, &k) in color.iter().enumerate() {
                    planes[ci * h * w + y * w + x] = k;
                }
            }
        }
    }
    let lights = 2 + rng.below(4);
    for _ in 0..lights {
        let lx = rng.below(w as u64) as f64;
        let ly = rng.below(h as u64) as f64;
        let sigma = rng.uniform(0.8, 2.5);
        let amp = rng.uniform(0.4, 0.9);
        let color = [1.0, rng.uniform(0.75, 1.0), rng.uniform(0.5, 0.9)];
        for y in 0..h {
            for x in 0..w {
                let d2 = (x as f64 - lx) * (x as f64 - lx) + (y as f64 - ly) * (y as f64 - ly);
                let v = amp * libm::exp(-d2 / (2.0 * sigma * sigma));
                if v > 1e-4 {
                    for (ci, &k) in color.iter().enumerate() {
                        planes[ci * h * w + y * w + x] += k * v;
                    }
                }
            }
        }
    }
    let mut image = Tensor::zeros(1, 3, h, w);
    for (o, &v) in image.data_mut().iter_mut().zip(planes.iter()) {
        *o = F::from_f64(v.clamp(0.0, 1.0));
    }
    image
}

/// Sampling configuration for [`PairSampler`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetConfig {
    /// Square patch extent delivered for both images of a pair.
    pub patch: usize,
    /// Pairs per epoch; indices wrap into fresh draws, not repeats.
    pub epoch_len: usize,
    /// Apply the random affine augmentation to flare assets.
    pub augment: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            patch: 128,
            epoch_len: 16,
            augment: true,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 {
            return Err(Error::config("dataset patch size must be nonzero"));
        }
        if self.epoch_len == 0 {
            return Err(Error::config("dataset epoch length must be nonzero"));
        }
        Ok(())
    }
}

/// One delivered pair plus the draws that produced it (for manifests).
#[derive(Debug, Clone)]
pub struct Sample<F: Real> {
    pub corrupted: Tensor<F>,
    pub gt: Tensor<F>,
    pub gamma: f64,
    pub base_index: usize,
    pub flare_index: usize,
}

/// Deterministic pair stream over in-memory assets. Sample `i` depends only
/// on `(seed, i)`: prefetching in any order delivers the single-worker
/// sequence.
#[derive(Debug, Clone)]
pub struct PairSampler<F: Real> {
    bases: Vec<Tensor<F>>,
    flares: Vec<FlareAsset<F>>,
    cfg: DatasetConfig,
    seed: u64,
}

impl<F: Real> PairSampler<F> {
    pub fn new(
        bases: Vec<Tensor<F>>,
        flares: Vec<FlareAsset<F>>,
        cfg: DatasetConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if bases.is_empty() {
            return Err(Error::config("dataset has no base images"));
        }
        if flares.is_empty() {
            return Err(Error::config("dataset has no flare assets"));
        }
        for b in &bases {
            expect_unit_rgb(b, "base image")?;
        }
        Ok(PairSampler {
            bases,
            flares,
            cfg,
            seed,
        })
    }

    /// Pairs per epoch (the configured value, independent of asset counts).
    pub fn len(&self) -> usize {
        self.cfg.epoch_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn config(&self) -> &DatasetConfig {
        &self.cfg
    }

    /// Produce pair `index`. Draw order within the per-index stream: base
    /// choice, flare choice, base placement, augmentation, flare placement,
    /// gamma.
    pub fn pair(&self, index: usize) -> Result<Sample<F>> {
        let mut rng = Rng::from_label(self.seed, &format!("sample.{index}"));
        let base_index = rng.below(self.bases.len() as u64) as usize;
        let flare_index = rng.below(self.flares.len() as u64) as usize;
        let base = fit_to_patch(&self.bases[base_index], self.cfg.patch, &mut rng);
        let flare = &self.flares[flare_index];
        let warped = if self.cfg.augment {
            let (_, _, fh, fw) = flare.image.shape();
            let ap = AugmentParams::sample(&mut rng, fh, fw);
            augment_flare(flare, &ap)?.image
        } else {
            flare.image.clone()
        };
        let flare_patch = fit_to_patch(&warped, self.cfg.patch, &mut rng);
        let gamma = draw_gamma(&mut rng);
        let (corrupted, gt) = synthesize_pair(&base, &flare_patch, gamma)?;
        Ok(Sample {
            corrupted,
            gt,
            gamma,
            base_index,
            flare_index,
        })
    }
}

/// Deliver an image at exactly `patch` x `patch`: pass through when it
/// already fits, random-crop when larger, bilinear-resize when smaller.
fn fit_to_patch<F: Real>(img: &Tensor<F>, patch: usize, rng: &mut Rng) -> Tensor<F> {
    let (n, c, h, w) = img.shape();
    if h == patch && w == patch {
        return img.clone();
    }
    if h >= patch && w >= patch {
        let y0 = rng.below((h - patch + 1) as u64) as usize;
        let x0 = rng.below((w - patch + 1) as u64) as usize;
        let mut out = Tensor::zeros(n, c, patch, patch);
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..patch {
                    let src = &img.row(ni, ci, y0 + y)[x0..x0 + patch];
                    out.row_mut(ni, ci, y).copy_from_slice(src);
                }
            }
        }
        return out;
    }
    bilinear_resize(img, patch, patch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn asset(h: usize, w: usize, seed: u64) -> FlareAsset<f64> {
        let mut rng = Rng::new(seed);
        let mut t = Tensor::zeros(1, 3, h, w);
        for v in t.data_mut() {
            *v = rng.uniform(0.0, 1.0);
        }
        FlareAsset::new(t, FlareKind::Scattering).unwrap()
    }

    #[test]
    fn identity_augment_is_exact_and_ranges_are_enforced() {
        let f = asset(8, 8, 1);
        let out = augment_flare(&f, &AugmentParams::identity()).unwrap();
        assert_eq!(out.image.data(), f.image.data());
        let bad = |p: AugmentParams| augment_flare(&f, &p).unwrap_err();
        let id = AugmentParams::identity;
        assert!(matches!(bad(AugmentParams { rotation_deg: 360.0, ..id() }), Error::Argument(_)));
        assert!(matches!(bad(AugmentParams { translate_x: 2.1, ..id() }), Error::Argument(_)));
        assert!(matches!(bad(AugmentParams { translate_y: -2.1, ..id() }), Error::Argument(_)));
        assert!(matches!(bad(AugmentParams { shear_deg: 20.5, ..id() }), Error::Argument(_)));
        assert!(matches!(bad(AugmentParams { scale: 0.79, ..id() }), Error::Argument(_)));
        assert!(matches!(bad(AugmentParams { scale: 1.51, ..id() }), Error::Argument(_)));
    }

    #[test]
    fn flips_are_exact_involutions() {
        let f = asset(6, 9, 2);
        let hflip = AugmentParams {
            flip_h: true,
            ..AugmentParams::identity()
        };
        let vflip = AugmentParams {
            flip_v: true,
            ..AugmentParams::identity()
        };
        let once = augment_flare(&f, &hflip).unwrap();
        assert_ne!(once.image.data(), f.image.data());
        let twice = augment_flare(&once, &hflip).unwrap();
        assert_eq!(twice.image.data(), f.image.data());
        // Horizontal flip is the exact column reversal.
        for y in 0..6 {
            for x in 0..9 {
                assert_eq!(once.image.at(0, 0, y, x), f.image.at(0, 0, y, 8 - x));
            }
        }
        let v2 = augment_flare(&augment_flare(&f, &vflip).unwrap(), &vflip).unwrap();
        assert_eq!(v2.image.data(), f.image.data());
    }

    #[test]
    fn quarter_turn_matches_the_index_permutation() {
        // Asymmetric 4x4 pattern with distinct values; a 90-degree turn must
        // be the exact permutation out[y][x] = in[3-x][y] (no resampling).
        let mut t = Tensor::zeros(1, 3, 4, 4);
        for ci in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    *t.at_mut(0, ci, y, x) = ((ci * 16 + y * 4 + x) as f64) / 47.0;
                }
            }
        }
        let f = FlareAsset::new(t, FlareKind::Reflective).unwrap();
        let turned = augment_flare(
            &f,
            &AugmentParams {
                rotation_deg: 90.0,
                ..AugmentParams::identity()
            },
        )
        .unwrap();
        for ci in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(turned.image.at(0, ci, y, x), f.image.at(0, ci, 3 - x, y));
                }
            }
        }
    }

    #[test]
    fn compositing_closed_forms_and_contracts() {
        let base = generate_base::<f64>(8, 8, 3);
        let zero = Tensor::zeros(1, 3, 8, 8);
        let (corrupted, gt) = synthesize_pair(&base, &zero, 2.2).unwrap();
        assert_eq!(corrupted.data(), base.data());
        assert_eq!(gt.data(), base.data());
        // Black base passes the flare through verbatim.
        let flare = asset(8, 8, 4).image;
        let (c2, _) = synthesize_pair(&zero, &flare, 1.8).unwrap();
        assert_eq!(c2.data(), flare.data());
        // Half plus half at gamma 2: sqrt(1/2).
        let half = Tensor::<f64>::filled(1, 3, 8, 8, 0.5);
        let (c3, _) = synthesize_pair(&half, &half, 2.0).unwrap();
        for &v in c3.data() {
            assert!((v - libm::sqrt(0.5)).abs() < 1e-12);
        }
        // Saturation clips to exactly one.
        let bright = Tensor::<f64>::filled(1, 3, 8, 8, 0.9);
        let (c4, _) = synthesize_pair(&bright, &bright, 2.0).unwrap();
        assert!(c4.data().iter().all(|&v| v == 1.0));
        // Contract violations.
        assert!(matches!(
            synthesize_pair(&base, &flare, 1.7).unwrap_err(),
            Error::Argument(_)
        ));
        assert!(matches!(
            synthesize_pair(&base, &flare, 2.7).unwrap_err(),
            Error::Argument(_)
        ));
        let small = Tensor::<f64>::zeros(1, 3, 4, 4);
        assert!(matches!(
            synthesize_pair(&base, &small, 2.0).unwrap_err(),
            Error::Dimension(_)
        ));
    }

    #[test]
    fn flare_only_adds_energy() {
        let base = generate_base::<f64>(12, 12, 5);
        let flare = generate_flare::<f64>(FlareKind::Scattering, 12, 12, 6).image;
        let gamma = 2.4;
        let (corrupted, _) = synthesize_pair(&base, &flare, gamma).unwrap();
        for ((&c, &b), &f) in corrupted.data().iter().zip(base.data()).zip(flare.data()) {
            // Exact in linear light; encoded values can round by an ulp.
            assert!(libm::pow(b, gamma) + libm::pow(f, gamma) >= libm::pow(b, gamma));
            assert!(c >= b - 1e-12, "corrupted {c} fell below base {b}");
        }
    }

    #[test]
    fn generators_are_deterministic_and_in_range() {
        for kind in [FlareKind::Scattering, FlareKind::Reflective] {
            let a = generate_flare::<f64>(kind, 24, 24, 7);
            let b = generate_flare::<f64>(kind, 24, 24, 7);
            assert_eq!(a.image.data(), b.image.data());
            assert!(a.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            // Mostly dark background.
            assert!(a.image.mean_f64() < 0.3, "flare mean {}", a.image.mean_f64());
            assert!(a.image.max_abs_f64() > 0.05, "flare has no signal");
        }
        let x = generate_base::<f64>(24, 24, 8);
        let y = generate_base::<f64>(24, 24, 8);
        assert_eq!(x.data(), y.data());
        assert!(x.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let spread = x.data().iter().cloned().fold(0.0f64, f64::max)
            - x.data().iter().cloned().fold(1.0f64, f64::min);
        assert!(spread > 0.05, "base image is nearly constant");
    }

    #[test]
    fn sampler_is_deterministic_and_index_stateless() {
        let bases = vec![generate_base::<f64>(32, 32, 10), generate_base::<f64>(24, 40, 11)];
        let flares = vec![
            generate_flare::<f64>(FlareKind::Scattering, 32, 32, 12),
            generate_flare::<f64>(FlareKind::Reflective, 40, 28, 13),
        ];
        let cfg = DatasetConfig {
            patch: 16,
            epoch_len: 5,
            augment: true,
        };
        let s1 = PairSampler::new(bases.clone(), flares.clone(), cfg.clone(), 42).unwrap();
        let s2 = PairSampler::new(bases.clone(), flares.clone(), cfg.clone(), 42).unwrap();
        assert_eq!(s1.len(), 5);
        // Out-of-order access delivers the in-order sequence.
        let late = s1.pair(3).unwrap();
        for i in (0..5).rev() {
            let a = s1.pair(i).unwrap();
            let b = s2.pair(i).unwrap();
            assert_eq!(a.corrupted.data(), b.corrupted.data());
            assert_eq!(a.gt.data(), b.gt.data());
            assert_eq!(a.gamma, b.gamma);
            assert_eq!(a.corrupted.shape(), (1, 3, 16, 16));
            assert!((GAMMA_MIN..=GAMMA_MAX).contains(&a.gamma));
        }
        assert_eq!(late.corrupted.data(), s2.pair(3).unwrap().corrupted.data());
        let s3 = PairSampler::new(bases, flares, cfg, 43).unwrap();
        assert_ne!(s3.pair(0).unwrap().corrupted.data(), s1.pair(0).unwrap().corrupted.data());
    }

    #[test]
    fn sampler_reduces_to_direct_synthesis_without_augmentation() {
        let base = generate_base::<f64>(16, 16, 20);
        let flare = generate_flare::<f64>(FlareKind::Scattering, 16, 16, 21);
        let cfg = DatasetConfig {
            patch: 16,
            epoch_len: 2,
            augment: false,
        };
        let s = PairSampler::new(vec![base.clone()], vec![flare.clone()], cfg, 1).unwrap();
        let sample = s.pair(0).unwrap();
        assert_eq!(sample.base_index, 0);
        assert_eq!(sample.flare_index, 0);
        assert_eq!(sample.gt.data(), base.data());
        let (want, _) = synthesize_pair(&base, &flare.image, sample.gamma).unwrap();
        assert_eq!(sample.corrupted.data(), want.data());
    }

    #[test]
    fn sampler_rejects_empty_or_invalid_inputs() {
        let base = generate_base::<f64>(8, 8, 1);
        let flare = generate_flare::<f64>(FlareKind::Scattering, 8, 8, 2);
        let cfg = DatasetConfig {
            patch: 8,
            epoch_len: 1,
            augment: true,
        };
        assert!(matches!(
            PairSampler::<f64>::new(vec![], vec![flare.clone()], cfg.clone(), 1).unwrap_err(),
            Error::Config(_)
        ));
        assert!(matches!(
            PairSampler::new(vec![base.clone()], vec![], cfg.clone(), 1).unwrap_err(),
            Error::Config(_)
        ));
        let zero_patch = DatasetConfig { patch: 0, ..cfg };
        assert!(matches!(
            PairSampler::new(vec![base], vec![flare], zero_patch, 1).unwrap_err(),
            Error::Config(_)
        ));
    }

    #[test]
    fn patch_fitting_crops_or_resizes() {
        let bases = vec![generate_base::<f64>(10, 40, 30)]; // taller-than-patch only in one axis
        let flares = vec![generate_flare::<f64>(FlareKind::Reflective, 64, 64, 31)];
        let cfg = DatasetConfig {
            patch: 16,
            epoch_len: 1,
            augment: false,
        };
        // Base is 10x40: smaller in height, so it resizes; flare 64x64 crops.
        let s = PairSampler::new(bases, flares, cfg, 9).unwrap();
        let sample = s.pair(0).unwrap();
        assert_eq!(sample.corrupted.shape(), (1, 3, 16, 16));
        assert_eq!(sample.gt.shape(), (1, 3, 16, 16));
    }
}
