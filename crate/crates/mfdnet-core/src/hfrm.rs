//! High-frequency refinement: mask-guided cleanup of the pyramid's detail
//! bands.
//!
//! Flare contaminates the detail bands locally (streaks, halo edges), so each
//! band is modulated rather than regenerated: a per-level mask network looks
//! at the band together with low-frequency context and emits a bounded
//! correction field `M` (tanh output), and the band is updated as
//! `band * M + band` — `M = 0` leaves the band untouched, `M = -1` erases it,
//! `M > 0` amplifies it.
//!
//! Levels run coarsest to finest. The coarsest mask sees the upsampled
//! residual and the upsampled restored residual alongside its band; finer
//! masks see the previous level's upsampled mask instead of the raw residual,
//! plus the restored residual upsampled progressively to their scale. After
//! masking, each band passes through a dilated-convolution embedding and a
//! feature-attention block; the finest level adds spatial-pyramid-pooling
//! fusion for a final dose of global context.
//!
//! Initialization makes the whole module an exact identity on the bands:
//! mask output convs start at zero (so `M = tanh(0) = 0`), the dilated
//! embedding starts as a center-tap selector that plants the band in the
//! first three feature channels, the attention gate opens at exactly 0.5,
//! and the following projection starts at twice the selector to compensate.

use crate::blocks::{Fab, FabCache, Spp, SppCache};
use crate::error::{Error, Result};
use crate::nn::act::{leaky_relu, leaky_relu_backward, tanh_act, tanh_backward};
use crate::nn::{Conv2d, Init, Param, ParamOwner};
use crate::pyramid::{upsample2x, upsample2x_backward};
use crate::scalar::Real;
use crate::tensor::Tensor;
use alloc::format;
use alloc::vec::Vec;

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HfrmConfig {
    /// Hidden width of each mask network.
    pub mask_width: usize,
    /// Feature width of the refinement embedding.
    pub refine_width: usize,
    /// Squeeze reduction inside the feature-attention block.
    pub fab_reduction: usize,
}

impl Default for HfrmConfig {
    fn default() -> Self {
        HfrmConfig {
            mask_width: 16,
            refine_width: 16,
            fab_reduction: 4,
        }
    }
}

impl HfrmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mask_width == 0 {
            return Err(Error::config("mask_width must be at least 1"));
        }
        if self.refine_width < 3 {
            return Err(Error::config(format!(
                "refine_width must be at least 3 to carry RGB, got {}",
                self.refine_width
            )));
        }
        if self.fab_reduction == 0 || self.refine_width % self.fab_reduction != 0 {
            return Err(Error::config(format!(
                "fab_reduction ({}) must divide refine_width ({})",
                self.fab_reduction, self.refine_width
            )));
        }
        Ok(())
    }
}

/// One refinement stage per pyramid band.
pub struct Hfrm<F> {
    pub cfg: HfrmConfig,
    depth: usize,
    mask_head: Vec<Conv2d<F>>,
    mask_out: Vec<Conv2d<F>>,
    refine_embed: Vec<Conv2d<F>>,
    fab: Vec<Fab<F>>,
    spp: Spp<F>,
}

struct LevelCache<F> {
    mask_in: Tensor<F>,
    hidden_pre: Tensor<F>,
    hidden: Tensor<F>,
    mask: Tensor<F>,
    masked_band: Tensor<F>,
    embedded: Tensor<F>,
    fab_cache: FabCache<F>,
}

pub struct HfrmCache<F> {
    levels: Vec<LevelCache<F>>,
    spp_in: Tensor<F>,
    spp_cache: SppCache<F>,
}

impl<F: Real> Hfrm<F> {
    pub fn new(name: &str, cfg: &HfrmConfig, depth: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if depth == 0 {
            return Err(Error::config("refinement needs at least one pyramid level"));
        }
        let mut mask_head = Vec::with_capacity(depth);
        let mut mask_out = Vec::with_capacity(depth);
        let mut refine_embed = Vec::with_capacity(depth);
        let mut fab = Vec::with_capacity(depth);
        for k in 0..depth {
            mask_head.push(Conv2d::new(
                &format!("{name}.level{k}.mask.head"),
                9,
                cfg.mask_width,
                3,
                1,
                1,
                1,
                1,
                true,
                Init::FanInUniform,
                seed,
            ));
            mask_out.push(Conv2d::new(
                &format!("{name}.level{k}.mask.out"),
                cfg.mask_width,
                3,
                3,
                1,
                1,
                1,
                1,
                true,
                Init::Zero,
                seed,
            ));
            // Dilated 3x3 embedding, initialized as a center-tap selector:
            // the band lands verbatim in the first three feature channels.
            let mut embed = Conv2d::new(
                &format!("{name}.level{k}.refine.embed"),
                3,
                cfg.refine_width,
                3,
                1,
                2,
                2,
                1,
                true,
                Init::Zero,
                seed,
            );
            for ci in 0..3 {
                let i = embed.w.v.idx(ci, ci, 1, 1);
                embed.w.v.data_mut()[i] = F::ONE;
            }
            refine_embed.push(embed);
            // Attention gate opens at exactly 0.5 (zero squeeze weights), so
            // the projection starts at twice a selector to pass the band
            // through unchanged.
            let mut f = Fab::new(
                &format!("{name}.level{k}.refine.fab"),
                cfg.refine_width,
                cfg.fab_reduction,
                3,
                seed,
            );
            for ci in 0..3 {
                let i = f.proj.w.v.idx(ci, ci, 0, 0);
                f.proj.w.v.data_mut()[i] = F::from_f64(2.0);
            }
            fab.push(f);
        }
        let spp = Spp::new(&format!("{name}.spp"), 3, seed);
        Ok(Hfrm {
            cfg: cfg.clone(),
            depth,
            mask_head,
            mask_out,
            refine_embed,
            fab,
            spp,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    fn check_inputs(
        &self,
        bands: &[Tensor<F>],
        residual: &Tensor<F>,
        restored: &Tensor<F>,
    ) -> Result<()> {
        if bands.len() != self.depth {
            return Err(Error::structure(format!(
                "expected {} bands, got {}",
                self.depth,
                bands.len()
            )));
        }
        if restored.shape() != residual.shape() {
            return Err(Error::structure(format!(
                "restored residual shape {:?} does not match residual {:?}",
                restored.shape(),
                residual.shape()
            )));
        }
        let (n, c, mut h, mut w) = residual.shape();
        if c != 3 {
            return Err(Error::dimension("residual must be RGB"));
        }
        for k in (0..self.depth).rev() {
            h *= 2;
            w *= 2;
            if bands[k].shape() != (n, 3, h, w) {
                return Err(Error::structure(format!(
                    "band {k} has shape {:?}, expected {:?}",
                    bands[k].shape(),
                    (n, 3, h, w)
                )));
            }
        }
        Ok(())
    }

    fn mask_forward(&self, k: usize, mask_in: &Tensor<F>) -> (Tensor<F>, Tensor<F>, Tensor<F>) {
        let hidden_pre = self.mask_head[k].forward(mask_in);
        let hidden = leaky_relu(&hidden_pre, F::from_f64(LEAKY_SLOPE));
        let mask = tanh_act(&self.mask_out[k].forward(&hidden));
        (hidden_pre, hidden, mask)
    }

    /// The fusion stage: `band * mask + band`. A zero mask passes the band
    /// through bit-for-bit; a mask of -1 extinguishes it.
    pub fn apply_mask(band: &Tensor<F>, mask: &Tensor<F>) -> Tensor<F> {
        let mut out = band.hadamard(mask);
        out.add_assign(band);
        out
    }

    /// Refine all bands. `bands` are ordered finest first (as produced by
    /// pyramid decomposition); `residual` is the raw low-frequency image and
    /// `restored` its deflared counterpart. Returns refined bands, finest
    /// first.
    pub fn forward(
        &self,
        bands: &[Tensor<F>],
        residual: &Tensor<F>,
        restored: &Tensor<F>,
    ) -> Result<Vec<Tensor<F>>> {
        self.run(bands, residual, restored, false).map(|(outs, _)| outs)
    }

    pub fn forward_train(
        &self,
        bands: &[Tensor<F>],
        residual: &Tensor<F>,
        restored: &Tensor<F>,
    ) -> Result<(Vec<Tensor<F>>, HfrmCache<F>)> {
        let (outs, cache) = self.run(bands, residual, restored, true)?;
        Ok((outs, cache.expect("cache requested")))
    }

    fn run(
        &self,
        bands: &[Tensor<F>],
        residual: &Tensor<F>,
        restored: &Tensor<F>,
        keep: bool,
    ) -> Result<(Vec<Tensor<F>>, Option<HfrmCache<F>>)> {
        self.check_inputs(bands, residual, restored)?;
        let d = self.depth;
        let mut outs: Vec<Option<Tensor<F>>> = (0..d).map(|_| None).collect();
        let mut level_caches: Vec<Option<LevelCache<F>>> = (0..d).map(|_| None).collect();
        let mut spp_parts: Option<(Tensor<F>, SppCache<F>)> = None;

        let mut restored_up = upsample2x(restored);
        let mut prev_mask: Option<Tensor<F>> = None;
        for k in (0..d).rev() {
            let context = match &prev_mask {
                None => upsample2x(residual),
                Some(m) => upsample2x(m),
            };
            let mask_in = Tensor::concat_channels(&[&context, &restored_up, &bands[k]])?;
            let (hidden_pre, hidden, mask) = self.mask_forward(k, &mask_in);
            let masked_band = Self::apply_mask(&bands[k], &mask);
            let embedded = self.refine_embed[k].forward(&masked_band);
            let refined = if keep {
                let (r, fab_cache) = self.fab[k].forward_train(&embedded);
                level_caches[k] = Some(LevelCache {
                    mask_in,
                    hidden_pre,
                    hidden,
                    mask: mask.clone(),
                    masked_band,
                    embedded,
                    fab_cache,
                });
                r
            } else {
                self.fab[k].forward(&embedded)
            };
            let final_out = if k == 0 {
                if keep {
                    let (s, spp_cache) = self.spp.forward_train(&refined);
                    spp_parts = Some((refined, spp_cache));
                    s
                } else {
                    self.spp.forward(&refined)
                }
            } else {
                refined
            };
            outs[k] = Some(final_out);
            if k > 0 {
                restored_up = upsample2x(&restored_up);
                prev_mask = Some(mask);
            }
        }
        let outs: Vec<Tensor<F>> = outs.into_iter().map(|o| o.expect("all levels run")).collect();
        let cache = if keep {
            let (spp_in, spp_cache) = spp_parts.expect("finest level ran");
            Some(HfrmCache {
                levels: level_caches
                    .into_iter()
                    .map(|c| c.expect("all levels cached"))
                    .collect(),
                spp_in,
                spp_cache,
            })
        } else {
            None
        };
        Ok((outs, cache))
    }

    /// Backward from refined-band gradients to `(bands, residual, restored)`
    /// gradients, accumulating parameter gradients along the way.
    pub fn backward(
        &mut self,
        bands: &[Tensor<F>],
        cache: &HfrmCache<F>,
        g_outs: &[Tensor<F>],
    ) -> (Vec<Tensor<F>>, Tensor<F>, Tensor<F>) {
        let d = self.depth;
        assert_eq!(g_outs.len(), d);
        let slope = F::from_f64(LEAKY_SLOPE);
        let mut g_bands: Vec<Tensor<F>> = bands.iter().map(|b| b.zeros_like()).collect();
        // Gradient w.r.t. the mask of level k+1, produced while processing
        // level k (its context slot), consumed at level k+1.
        let mut g_next_mask: Option<Tensor<F>> = None;
        // Running total gradient w.r.t. the progressively upsampled restored
        // image at the current level's scale.
        let mut g_restored_up: Option<Tensor<F>> = None;
        let mut g_residual: Option<Tensor<F>> = None;

        for k in 0..d {
            let lc = &cache.levels[k];
            let g_refined = if k == 0 {
                self.spp.backward(&cache.spp_in, &cache.spp_cache, &g_outs[0])
            } else {
                g_outs[k].clone()
            };
            let g_embedded = self.fab[k].backward(&lc.embedded, &lc.fab_cache, &g_refined);
            let g_masked = self.refine_embed[k].backward(&lc.masked_band, &g_embedded);
            // masked = band * mask + band
            {
                let gb = &mut g_bands[k];
                for ((d_, &g), &m) in gb
                    .data_mut()
                    .iter_mut()
                    .zip(g_masked.data())
                    .zip(lc.mask.data())
                {
                    *d_ += g * (F::ONE + m);
                }
            }
            let mut g_mask = g_masked.hadamard(&bands[k]);
            if let Some(extra) = g_next_mask.take() {
                g_mask.add_assign(&extra);
            }
            let g_pre_tanh = tanh_backward(&lc.mask, &g_mask);
            let g_hidden = self.mask_out[k].backward(&lc.hidden, &g_pre_tanh);
            let g_hidden_pre = leaky_relu_backward(&lc.hidden_pre, &g_hidden, slope);
            let g_mask_in = self.mask_head[k].backward(&lc.mask_in, &g_hidden_pre);

            let g_context = g_mask_in.slice_channels(0, 3);
            let g_restored_slot = g_mask_in.slice_channels(3, 3);
            g_bands[k].add_assign(&g_mask_in.slice_channels(6, 3));

            // Restored-image chain: this level's upsampled copy feeds both
            // the mask input and (after another upsample) the next finer
            // level. Totals accumulate finest to coarsest.
            g_restored_up = Some(match g_restored_up.take() {
                None => g_restored_slot,
                Some(finer_total) => {
                    let mut t = upsample2x_backward(&finer_total);
                    t.add_assign(&g_restored_slot);
                    t
                }
            });

            if k + 1 < d {
                // Context was the upsampled mask of the next coarser level.
                g_next_mask = Some(upsample2x_backward(&g_context));
            } else {
                // Coarsest context was the upsampled raw residual.
                g_residual = Some(upsample2x_backward(&g_context));
            }
        }
        let g_restored = upsample2x_backward(&g_restored_up.expect("at least one level"));
        (
            g_bands,
            g_residual.expect("coarsest level ran"),
            g_restored,
        )
    }
}

impl<F: Real> ParamOwner<F> for Hfrm<F> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        for k in 0..self.depth {
            self.mask_head[k].visit_params(f);
            self.mask_out[k].visit_params(f);
            self.refine_embed[k].visit_params(f);
            self.fab[k].visit_params(f);
        }
        self.spp.visit_params(f);
    }
}
