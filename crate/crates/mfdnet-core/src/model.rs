//! The full deflare network: pyramid analysis, low-frequency restoration,
//! high-frequency refinement, synthesis — plus the saturated-highlight
//! blend-back post-process and the checkpoint codec.
//!
//! Data flow for one image: decompose into detail bands and a low-frequency
//! residual; restore the residual with the low-frequency pipeline; refine
//! each detail band with the mask-guided refinement (which also sees the raw
//! and restored residuals as context); rebuild the image from refined bands
//! on top of the restored residual. Every stage is an exact identity at
//! initialization, so an untrained model returns its input (up to pyramid
//! round-trip rounding) and training starts from "change nothing".
//!
//! Clipping to `[0, 1]` happens only in [`Mfdnet::deflare`], the inference
//! entry point — the raw `forward` stays unclipped so training gradients
//! flow everywhere.

use crate::error::{Error, Result};
use crate::hfrm::{Hfrm, HfrmCache, HfrmConfig};
use crate::lffpm::{Lffpm, LffpmCache, LffpmConfig};
use crate::params::{ParamStore, Reader};
use crate::pyramid::{
    blur, decompose, decompose_backward, reconstruct, reconstruct_backward, Pyramid,
};
use crate::nn::{Param, ParamOwner};
use crate::scalar::Real;
use crate::tensor::Tensor;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use sha2::{Digest, Sha256};

/// BT.601 luma weights, used to find saturated light sources.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

pub const DEFAULT_SATURATION_THRESHOLD: f64 = 0.97;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Number of pyramid detail bands.
    pub depth: usize,
    pub lffpm: LffpmConfig,
    pub hfrm: HfrmConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: 3,
            lffpm: LffpmConfig::default(),
            hfrm: HfrmConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 8 {
            return Err(Error::config(format!(
                "pyramid depth must be in 1..=8, got {}",
                self.depth
            )));
        }
        self.lffpm.validate()?;
        self.hfrm.validate()
    }

    /// Input extents must be divisible by this (pyramid halvings compound
    /// with the U-net's).
    pub fn divisor(&self) -> usize {
        (1usize << self.depth) * self.lffpm.divisor()
    }

    /// Canonical text form: one `key = value` per line, fixed order.
    /// This exact text is embedded in checkpoints, so the rendering must
    /// stay deterministic.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    fn entries(&self) -> [(&'static str, usize); 13] {
        [
            ("pyramid.depth", self.depth),
            ("lffpm.base_width", self.lffpm.base_width),
            ("lffpm.n_fetb", self.lffpm.n_fetb),
            ("lffpm.n_frtb", self.lffpm.n_frtb),
            ("lffpm.unet_depth", self.lffpm.unet_depth),
            ("lffpm.enc_blocks", self.lffpm.enc_blocks),
            ("lffpm.dec_blocks", self.lffpm.dec_blocks),
            ("lffpm.bottleneck_blocks", self.lffpm.bottleneck_blocks),
            ("lffpm.heads", self.lffpm.heads),
            ("lffpm.ffn_expansion", self.lffpm.ffn_expansion),
            ("hfrm.mask_width", self.hfrm.mask_width),
            ("hfrm.refine_width", self.hfrm.refine_width),
            ("hfrm.fab_reduction", self.hfrm.fab_reduction),
        ]
    }

    /// Apply one `key = value` assignment. Unknown keys are config errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v: usize = value
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("value for {key:?} is not a whole number: {value:?}")))?;
        let slot = match key {
            "pyramid.depth" => &mut self.depth,
            "lffpm.base_width" => &mut self.lffpm.base_width,
            "lffpm.n_fetb" => &mut self.lffpm.n_fetb,
            "lffpm.n_frtb" => &mut self.lffpm.n_frtb,
            "lffpm.unet_depth" => &mut self.lffpm.unet_depth,
            "lffpm.enc_blocks" => &mut self.lffpm.enc_blocks,
            "lffpm.dec_blocks" => &mut self.lffpm.dec_blocks,
            "lffpm.bottleneck_blocks" => &mut self.lffpm.bottleneck_blocks,
            "lffpm.heads" => &mut self.lffpm.heads,
            "lffpm.ffn_expansion" => &mut self.lffpm.ffn_expansion,
            "hfrm.mask_width" => &mut self.hfrm.mask_width,
            "hfrm.refine_width" => &mut self.hfrm.refine_width,
            "hfrm.fab_reduction" => &mut self.hfrm.fab_reduction,
            _ => return Err(Error::config(format!("unknown model config key {key:?}"))),
        };
        *slot = v;
        Ok(())
    }

    /// Parse the text form. Every known key must appear exactly once;
    /// blank lines and `#` comments are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected `key = value`, got {line:?}", lineno + 1))
            })?;
            let key = key.trim();
            if seen.iter().any(|s| *s == key) {
                return Err(Error::config(format!("line {}: duplicate key {key:?}", lineno + 1)));
            }
            cfg.set(key, value)?;
            seen.push(match cfg.entries().iter().find(|(k, _)| *k == key) {
                Some((k, _)) => k,
                None => unreachable!("set() accepted the key"),
            });
        }
        if seen.len() != cfg.entries().len() {
            let missing = cfg
                .entries()
                .iter()
                .map(|(k, _)| *k)
                .find(|k| !seen.contains(k))
                .unwrap_or("?");
            return Err(Error::config(format!("missing model config key {missing:?}")));
        }
        Ok(cfg)
    }
}

/// The assembled network.
pub struct Mfdnet<F> {
    pub cfg: ModelConfig,
    pub init_seed: u64,
    pub lffpm: Lffpm<F>,
    pub hfrm: Hfrm<F>,
}

pub struct MfdnetCache<F> {
    pyr: Pyramid<F>,
    lffpm_cache: LffpmCache<F>,
    hfrm_cache: HfrmCache<F>,
}

impl<F: Real> Mfdnet<F> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Mfdnet {
            cfg: cfg.clone(),
            init_seed: seed,
            lffpm: Lffpm::new("lffpm", &cfg.lffpm, seed)?,
            hfrm: Hfrm::new("hfrm", &cfg.hfrm, cfg.depth, seed)?,
        })
    }

    fn check_input(&self, x: &Tensor<F>) -> Result<()> {
        let (_, c, h, w) = x.shape();
        if c != 3 {
            return Err(Error::dimension(format!("input must be RGB, got {c} channels")));
        }
        let d = self.cfg.divisor();
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(Error::dimension(format!(
                "input extents {h}x{w} must be nonzero multiples of {d} \
                 (pyramid and U-net halvings); pad or crop first"
            )));
        }
        Ok(())
    }

    /// Unclipped restoration — the training-time forward pass.
    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        self.check_input(x)?;
        let p = decompose(x, self.cfg.depth)?;
        let restored = self.lffpm.forward(&p.residual)?;
        let bands = self.hfrm.forward(&p.bands, &p.residual, &restored)?;
        reconstruct(&Pyramid {
            bands,
            residual: restored,
        })
    }

    /// Inference entry point: forward pass clipped to the displayable range.
    pub fn deflare(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut y = self.forward(x)?;
        for v in y.data_mut() {
            *v = v.clamp01();
        }
        Ok(y)
    }

    pub fn forward_train(&self, x: &Tensor<F>) -> Result<(Tensor<F>, MfdnetCache<F>)> {
        self.check_input(x)?;
        let p = decompose(x, self.cfg.depth)?;
        let (restored, lffpm_cache) = self.lffpm.forward_train(&p.residual)?;
        let (bands, hfrm_cache) = self.hfrm.forward_train(&p.bands, &p.residual, &restored)?;
        let out = reconstruct(&Pyramid {
            bands,
            residual: restored,
        })?;
        Ok((
            out,
            MfdnetCache {
                pyr: p,
                lffpm_cache,
                hfrm_cache,
            },
        ))
    }

    /// Backward from an output gradient to the input gradient, accumulating
    /// every parameter gradient.
    pub fn backward(&mut self, cache: &MfdnetCache<F>, gy: &Tensor<F>) -> Tensor<F> {
        let (g_bands_hat, g_restored_syn) = reconstruct_backward(gy, self.cfg.depth);
        let (g_bands, g_residual_ctx, g_restored_ctx) =
            self.hfrm
                .backward(&cache.pyr.bands, &cache.hfrm_cache, &g_bands_hat);
        let g_restored = g_restored_syn.add(&g_restored_ctx);
        let g_residual = self
            .lffpm
            .backward(&cache.pyr.residual, &cache.lffpm_cache, &g_restored)
            .add(&g_residual_ctx);
        decompose_backward(&g_bands, &g_residual)
    }

    /// Sanity probe used by tests: the restored residual and refined bands an
    /// identity-initialized model produces are bit-identical to its inputs.
    pub fn stage_outputs(&self, x: &Tensor<F>) -> Result<(Pyramid<F>, Tensor<F>, Vec<Tensor<F>>)> {
        self.check_input(x)?;
        let p = decompose(x, self.cfg.depth)?;
        let restored = self.lffpm.forward(&p.residual)?;
        let bands = self.hfrm.forward(&p.bands, &p.residual, &restored)?;
        Ok((p, restored, bands))
    }
}

impl<F: Real> ParamOwner<F> for Mfdnet<F> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.lffpm.visit_params(f);
        self.hfrm.visit_params(f);
    }
}

/// Superimpose saturated light sources from the input back onto the deflared
/// image: deflare networks cannot recover detail inside blown-out sources,
/// so those pixels are taken verbatim from the input. The hard saturation
/// mask (BT.601 luminance >= threshold) is softened by one binomial blur
/// pass to avoid seams; interior pixels keep mask weight exactly 1.
pub fn blend_light_source<F: Real>(
    input: &Tensor<F>,
    deflared: &Tensor<F>,
    threshold: F,
) -> Result<Tensor<F>> {
    if input.shape() != deflared.shape() {
        return Err(Error::dimension(format!(
            "input {:?} and deflared {:?} shapes differ",
            input.shape(),
            deflared.shape()
        )));
    }
    let (n, c, h, w) = input.shape();
    if c != 3 {
        return Err(Error::dimension(format!("blend expects RGB, got {c} channels")));
    }
    let t = threshold.to_f64();
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::argument(format!(
            "saturation threshold must be in (0, 1], got {t}"
        )));
    }
    let lw: [F; 3] = core::array::from_fn(|i| F::from_f64(LUMA[i]));
    let mut mask = Tensor::<F>::zeros(n, 1, h, w);
    for ni in 0..n {
        for yy in 0..h {
            for xx in 0..w {
                let y = lw[0] * input.at(ni, 0, yy, xx)
                    + lw[1] * input.at(ni, 1, yy, xx)
                    + lw[2] * input.at(ni, 2, yy, xx);
                if y >= threshold {
                    *mask.at_mut(ni, 0, yy, xx) = F::ONE;
                }
            }
        }
    }
    let feathered = blur(&mask)?;
    let mut out = deflared.clone();
    for ni in 0..n {
        for ci in 0..c {
            for yy in 0..h {
                for xx in 0..w {
                    let m = feathered.at(ni, 0, yy, xx);
                    *out.at_mut(ni, ci, yy, xx) = m * input.at(ni, ci, yy, xx)
                        + (F::ONE - m) * deflared.at(ni, ci, yy, xx);
                }
            }
        }
    }
    Ok(out)
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MFDC";
pub const CHECKPOINT_VERSION: u16 = 1;
const CHECKSUM_LEN: usize = 32;

/// A serializable model snapshot: config, parameters, and (while training)
/// an opaque optimizer-state blob owned by the training layer.
///
/// Wire format (integers little-endian), followed by a SHA-256 checksum of
/// everything before it:
///
/// ```text
/// magic "MFDC" | version u16 | config_len u32 | config text
/// | params_len u32 | parameter store bytes
/// | trainer flag u8 | [trainer_len u32 | trainer bytes]
/// | sha256 (32 bytes)
/// ```
///
/// Encoding is deterministic (canonical config text, sorted parameter
/// records), so save → load → save is byte-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub config: ModelConfig,
    pub params: ParamStore<F>,
    pub trainer: Option<Vec<u8>>,
}

impl<F: Real> Checkpoint<F> {
    pub fn from_model(model: &mut Mfdnet<F>, trainer: Option<Vec<u8>>) -> Result<Self> {
        let seed = model.init_seed;
        Ok(Checkpoint {
            config: model.cfg.clone(),
            params: ParamStore::from_model(model, seed)?,
            trainer,
        })
    }

    /// Instantiate the model this snapshot describes.
    pub fn build_model(&self) -> Result<Mfdnet<F>> {
        let mut m = Mfdnet::new(&self.config, self.params.init_seed)?;
        self.params.load_into(&mut m)?;
        Ok(m)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg = self.config.to_text();
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        let params = self.params.to_bytes();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        out.extend_from_slice(&params);
        match &self.trainer {
            None => out.push(0),
            Some(blob) => {
                out.push(1);
                out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
                out.extend_from_slice(blob);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKSUM_LEN {
            return Err(Error::format(bytes.len(), "file shorter than its checksum"));
        }
        let (payload, stored) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        let digest = Sha256::digest(payload);
        if digest.as_slice() != stored {
            return Err(Error::format(
                payload.len(),
                "checksum mismatch — file corrupt or truncated",
            ));
        }
        let mut r = Reader::new(payload);
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "bad magic, not a checkpoint"));
        }
        let version = r.u16("checkpoint version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let cfg_len = r.u32("config length")? as usize;
        let cfg_off = r.pos;
        let cfg_bytes = r.take(cfg_len, "config text")?;
        let cfg_text = core::str::from_utf8(cfg_bytes)
            .map_err(|_| Error::format(cfg_off, "config text is not valid UTF-8"))?;
        let config = ModelConfig::from_text(cfg_text)?;
        let params_len = r.u32("parameter block length")? as usize;
        let params_off = r.pos;
        let params_bytes = r.take(params_len, "parameter block")?;
        let params = ParamStore::from_bytes(params_bytes).map_err(|e| match e {
            // Re-anchor nested offsets to the whole file.
            Error::Format { offset, what } => Error::Format {
                offset: offset + params_off,
                what,
            },
            other => other,
        })?;
        let trainer = match r.u8("trainer flag")? {
            0 => None,
            1 => {
                let len = r.u32("trainer state length")? as usize;
                Some(r.take(len, "trainer state")?.to_vec())
            }
            v => {
                return Err(Error::format(r.pos - 1, format!("trainer flag must be 0 or 1, got {v}")));
            }
        };
        if r.pos != payload.len() {
            return Err(Error::format(r.pos, "trailing bytes after trainer state"));
        }
        Ok(Checkpoint {
            config,
            params,
            trainer,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::zero_grads;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            depth: 1,
            lffpm: LffpmConfig {
                base_width: 8,
                n_fetb: 1,
                n_frtb: 1,
                unet_depth: 1,
                enc_blocks: 1,
                dec_blocks: 1,
                bottleneck_blocks: 1,
                heads: 2,
                ffn_expansion: 2,
            },
            hfrm: HfrmConfig {
                mask_width: 4,
                refine_width: 4,
                fab_reduction: 4,
            },
        }
    }

    /// Uniform values quantized to 8-bit levels — the domain real images
    /// live in.
    fn image(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = crate::rng::Rng::new(seed);
        let mut t = Tensor::zeros(n, 3, h, w);
        for v in t.data_mut() {
            *v = (rng.below(256) as f64) / 255.0;
        }
        t
    }

    #[test]
    fn identity_at_init_with_default_config() {
        let cfg = ModelConfig::default();
        let net = Mfdnet::<f64>::new(&cfg, 11).unwrap();
        let x = image(1, 64, 64, 21);
        // Each learned stage is bit-exact identity...
        let (p, restored, bands) = net.stage_outputs(&x).unwrap();
        assert_eq!(restored, p.residual);
        for (k, (b, pb)) in bands.iter().zip(&p.bands).enumerate() {
            assert_eq!(b, pb, "band {k}");
        }
        // ...so end-to-end error is pure pyramid round-trip rounding.
        let y = net.forward(&x).unwrap();
        let max_err = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-12, "max err {max_err}");
        // Inputs already in [0,1]: clipping changes nothing material.
        let d = net.deflare(&x).unwrap();
        assert_eq!(d.shape(), x.shape());
        let max_err = x
            .data()
            .iter()
            .zip(d.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-12);
    }

    #[test]
    fn rejects_input_not_divisible_by_the_model_grid() {
        let net = Mfdnet::<f64>::new(&ModelConfig::default(), 1).unwrap();
        // Default: depth 3 + unet depth 3 -> divisor 64.
        assert_eq!(net.cfg.divisor(), 64);
        let x = Tensor::<f64>::zeros(1, 3, 96, 64);
        match net.forward(&x) {
            Err(Error::Dimension(msg)) => {
                assert!(msg.contains("64"), "divisor not named: {msg}");
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
        let gray = Tensor::<f64>::zeros(1, 1, 64, 64);
        assert!(net.forward(&gray).is_err());
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let mut net = Mfdnet::<f64>::new(&tiny_config(), 3).unwrap();
        net.visit_params(&mut |p| {
            let mut rng = crate::rng::Rng::from_label(70, &p.name);
            for v in p.v.data_mut() {
                *v += 0.05 * rng.normal();
            }
        });
        let x = image(1, 8, 8, 31);
        let gy = {
            let mut rng = crate::rng::Rng::new(32);
            let mut t = Tensor::zeros(1, 3, 8, 8);
            for v in t.data_mut() {
                *v = rng.normal();
            }
            t
        };
        let loss = |net: &Mfdnet<f64>, x: &Tensor<f64>| -> f64 {
            let y = net.forward(x).unwrap();
            y.data().iter().zip(gy.data()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = net.forward_train(&x).unwrap();
        zero_grads(&mut net);
        let gx = net.backward(&cache, &gy);
        let eps = 1e-4;
        for i in (0..x.numel()).step_by(13) {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * eps);
            let got = gx.data()[i];
            assert!(
                (fd - got).abs() < 1e-3 * fd.abs().max(1.0),
                "input grad[{i}]: fd {fd} vs {got}"
            );
        }
        // Parameter spot checks across both halves of the network.
        for name in [
            "lffpm.embed.weight",
            "lffpm.fetb0.attn_h.query.weight",
            "hfrm.level0.mask.head.weight",
            "hfrm.spp.fuse.weight",
        ] {
            let (orig, analytic) = {
                let mut found = None;
                net.visit_params(&mut |p| {
                    if p.name == name && found.is_none() {
                        found = Some((p.v.data()[0], p.g.data()[0]));
                    }
                });
                found.unwrap_or_else(|| panic!("missing param {name}"))
            };
            let set = |net: &mut Mfdnet<f64>, v: f64| {
                net.visit_params(&mut |p| {
                    if p.name == name {
                        p.v.data_mut()[0] = v;
                    }
                });
            };
            set(&mut net, orig + eps);
            let lp = loss(&net, &x);
            set(&mut net, orig - eps);
            let lm = loss(&net, &x);
            set(&mut net, orig);
            let fd = (lp - lm) / (2.0 * eps);
            assert!(
                (fd - analytic).abs() < 1e-3 * fd.abs().max(1.0),
                "{name}: fd {fd} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn blend_preserves_saturated_interior_verbatim() {
        let mut input = image(1, 16, 16, 41);
        // Saturated 8x8 patch: luminance 1.0.
        for ci in 0..3 {
            for yy in 4..12 {
                for xx in 4..12 {
                    *input.at_mut(0, ci, yy, xx) = 1.0;
                }
            }
        }
        let deflared = image(1, 16, 16, 42);
        let out = blend_light_source(&input, &deflared, 0.97).unwrap();
        // Interior of the mask (2-pixel feather margin) is the input, bit for bit.
        for ci in 0..3 {
            for yy in 6..10 {
                for xx in 6..10 {
                    assert_eq!(out.at(0, ci, yy, xx), input.at(0, ci, yy, xx));
                }
            }
        }
        // Far from the patch the deflared image passes through unchanged.
        assert_eq!(out.at(0, 0, 0, 0), deflared.at(0, 0, 0, 0));
    }

    #[test]
    fn blend_matches_a_scalar_oracle() {
        // Independent per-pixel recomputation: luminance threshold, full 5x5
        // binomial feather, convex blend.
        let input = {
            let mut t = image(1, 8, 8, 51);
            for ci in 0..3 {
                for yy in 0..8 {
                    for xx in 4..8 {
                        *t.at_mut(0, ci, yy, xx) = 0.99;
                    }
                }
            }
            t
        };
        let deflared = image(1, 8, 8, 52);
        let threshold = 0.9;
        let out = blend_light_source(&input, &deflared, threshold).unwrap();
        let kernel = [1.0, 4.0, 6.0, 4.0, 1.0].map(|v: f64| v / 16.0);
        let reflect = |i: isize, n: isize| -> usize {
            let j = if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
            j as usize
        };
        let hard = |yy: usize, xx: usize| -> f64 {
            let y = 0.299 * input.at(0, 0, yy, xx)
                + 0.587 * input.at(0, 1, yy, xx)
                + 0.114 * input.at(0, 2, yy, xx);
            if y >= threshold { 1.0 } else { 0.0 }
        };
        for yy in 0..8usize {
            for xx in 0..8usize {
                let mut m = 0.0;
                for ty in 0..5 {
                    for tx in 0..5 {
                        let iy = reflect(yy as isize + ty - 2, 8);
                        let ix = reflect(xx as isize + tx - 2, 8);
                        m += kernel[ty as usize] * kernel[tx as usize] * hard(iy, ix);
                    }
                }
                for ci in 0..3 {
                    let want = m * input.at(0, ci, yy, xx) + (1.0 - m) * deflared.at(0, ci, yy, xx);
                    let got = out.at(0, ci, yy, xx);
                    assert!((want - got).abs() < 1e-15, "({yy},{xx},{ci}): {want} vs {got}");
                }
            }
        }
    }

    #[test]
    fn blend_threshold_one_returns_deflared_when_nothing_saturates() {
        let input = {
            let mut t = image(1, 8, 8, 61);
            for v in t.data_mut() {
                *v = v.min(0.95);
            }
            t
        };
        let deflared = image(1, 8, 8, 62);
        let out = blend_light_source(&input, &deflared, 1.0).unwrap();
        assert_eq!(out, deflared);
        // Threshold outside (0, 1] is rejected.
        for bad in [0.0, -0.5, 1.5] {
            assert!(matches!(
                blend_light_source(&input, &deflared, bad),
                Err(Error::Argument(_))
            ));
        }
    }

    #[test]
    fn config_text_round_trips_and_rejects_malformed_input() {
        let cfg = tiny_config();
        let text = cfg.to_text();
        assert_eq!(ModelConfig::from_text(&text).unwrap(), cfg);
        // Comments and blank lines are fine.
        let with_comments = format!("# snapshot\n\n{text}");
        assert_eq!(ModelConfig::from_text(&with_comments).unwrap(), cfg);
        // Unknown key, duplicate key, missing key, non-numeric value.
        assert!(ModelConfig::from_text(&format!("{text}bogus.key = 3\n")).is_err());
        assert!(ModelConfig::from_text(&format!("{text}pyramid.depth = 3\n")).is_err());
        assert!(ModelConfig::from_text("pyramid.depth = 3\n").is_err());
        assert!(ModelConfig::from_text(&text.replace("= 8", "= eight")).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical_and_rebuilds_the_model() {
        let mut net = Mfdnet::<f32>::new(&tiny_config(), 9).unwrap();
        net.visit_params(&mut |p| {
            let mut rng = crate::rng::Rng::from_label(90, &p.name);
            for v in p.v.data_mut() {
                *v += 0.02 * rng.normal() as f32;
            }
        });
        let ck = Checkpoint::from_model(&mut net, Some(alloc::vec![7u8, 8, 9])).unwrap();
        let bytes = ck.to_bytes();
        let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.config, net.cfg);
        assert_eq!(back.trainer.as_deref(), Some(&[7u8, 8, 9][..]));
        // The rebuilt model deflares identically.
        let rebuilt = back.build_model().unwrap();
        let x = {
            let mut t = Tensor::<f32>::zeros(1, 3, 8, 8);
            let mut rng = crate::rng::Rng::new(91);
            for v in t.data_mut() {
                *v = rng.uniform(0.0, 1.0) as f32;
            }
            t
        };
        assert_eq!(net.deflare(&x).unwrap(), rebuilt.deflare(&x).unwrap());
    }

    #[test]
    fn checkpoint_rejects_corruption_truncation_and_versions() {
        let mut net = Mfdnet::<f32>::new(&tiny_config(), 9).unwrap();
        let bytes = Checkpoint::from_model(&mut net, None).unwrap().to_bytes();
        // Any flipped byte breaks the checksum.
        for pos in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x40;
            assert!(
                matches!(Checkpoint::<f32>::from_bytes(&bad), Err(Error::Format { .. })),
                "flip at {pos} accepted"
            );
        }
        // Truncation is caught before any parsing.
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&bytes[..10]),
            Err(Error::Format { .. })
        ));
        // A future version is rejected explicitly (checksum recomputed so the
        // tamper isn't reported as corruption).
        let mut future = bytes.clone();
        future[4] = 9;
        let digest = Sha256::digest(&future[..future.len() - CHECKSUM_LEN]);
        let at = future.len() - CHECKSUM_LEN;
        future[at..].copy_from_slice(&digest);
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&future),
            Err(Error::Version { found: 9, .. })
        ));
    }
}
