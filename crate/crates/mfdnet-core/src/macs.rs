//! Analytic multiply-accumulate accounting, mirroring the network's forward
//! graph op for op without executing it.
//!
//! Conventions (one MAC = one multiply feeding an accumulator):
//!
//! * Convolutions and linear layers: `out_elements * taps_per_output`.
//!   Bias adds, pooling sums, residual adds, normalization, activations, and
//!   elementwise gates are adds or lone multiplies, not MACs, and are not
//!   counted. They are a vanishing fraction of the total and identically
//!   pixel-linear, so no ratio changes.
//! * Interpolation: 4 MACs per output value (bilinear corner blend).
//! * Axis-attention score and mixing matmuls are tallied separately in
//!   [`MacBreakdown::attention_matmul`] and excluded from the headline
//!   count. They scale with `pixels * axis_length`, not with pixels; the
//!   headline count is exactly linear in pixel count, which is the scaling
//!   law the reported complexity figures follow. Include them via
//!   [`MacBreakdown::with_attention`] when the quadratic tail matters.
//!
//! Counts are per image (batch 1). Extents that are not multiples of the
//! model's divisor are padded up first, exactly as inference does.

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use alloc::format;

/// Per-bucket MAC tallies for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MacBreakdown {
    /// Convolution and linear-layer MACs.
    pub conv: u64,
    /// Bilinear resampling MACs (pyramid, refinement context, pooling fusion).
    pub interpolation: u64,
    /// Axis-attention score/mixing matmul MACs (quadratic along each axis).
    pub attention_matmul: u64,
}

impl MacBreakdown {
    /// The headline count: convolution, linear, and resampling work. Linear in
    /// pixel count apart from a constant per-image descriptor term (the
    /// global-pooled attention squeezes), which is about 0.01% of the total
    /// at 256x256 and shrinks as the canvas grows.
    pub fn headline(&self) -> u64 {
        self.conv + self.interpolation
    }

    /// Headline plus the attention matmuls.
    pub fn with_attention(&self) -> u64 {
        self.headline() + self.attention_matmul
    }
}

/// MACs of one convolution: output elements times taps per output.
/// Grouping divides the taps; dilation and stride only affect the output
/// extents, which the caller passes in.
pub fn conv_macs(cin: usize, cout: usize, k: usize, groups: usize, out_h: usize, out_w: usize) -> u64 {
    (out_h * out_w * cout) as u64 * (cin / groups) as u64 * (k * k) as u64
}

fn linear_macs(cin: usize, cout: usize) -> u64 {
    (cin * cout) as u64
}

/// 4 MACs per output value of a bilinear resample.
fn resize_macs(c: usize, out_h: usize, out_w: usize) -> u64 {
    4 * (c * out_h * out_w) as u64
}

/// Round `v` up to the next multiple of `divisor`.
pub fn padded_extent(v: usize, divisor: usize) -> usize {
    v.div_ceil(divisor) * divisor
}

/// One transformer block at extent (h, w), width c: the four axis-attention
/// projections per axis plus the gated feed-forward.
fn transformer_block(b: &mut MacBreakdown, c: usize, expansion: usize, h: usize, w: usize) {
    // Q, K, V, out projections for the height pass and the width pass.
    b.conv += 8 * conv_macs(c, c, 1, 1, h, w);
    // Scores (QK^T) and mixing (AV) per axis: 2 * seq^2 * other * c.
    b.attention_matmul += 2 * (w * h * h * c) as u64; // height axis
    b.attention_matmul += 2 * (h * w * w * c) as u64; // width axis
    // Feed-forward: two expansion branches and the output projection.
    b.conv += 3 * conv_macs(c, expansion * c, 1, 1, h, w);
}

/// One gated convolution block at extent (h, w), width c.
fn conv_block(b: &mut MacBreakdown, c: usize, h: usize, w: usize) {
    b.conv += conv_macs(c, 2 * c, 1, 1, h, w); // expand1
    b.conv += conv_macs(2 * c, 2 * c, 3, 2 * c, h, w); // depthwise
    b.conv += linear_macs(c, c); // channel-attention descriptor
    b.conv += conv_macs(c, c, 1, 1, h, w); // proj1
    b.conv += conv_macs(c, 2 * c, 1, 1, h, w); // expand2
    b.conv += conv_macs(c, c, 1, 1, h, w); // proj2
}

/// Analytic MAC count for one image at the given extents. Extents are padded
/// up to the model's divisor first (the canvas inference actually runs on).
pub fn count_macs(cfg: &ModelConfig, height: usize, width: usize) -> Result<MacBreakdown> {
    cfg.validate()?;
    if height == 0 || width == 0 {
        return Err(Error::dimension(format!(
            "image extents must be nonzero, got {height}x{width}"
        )));
    }
    let div = cfg.divisor();
    let h = padded_extent(height, div);
    let w = padded_extent(width, div);
    let d = cfg.depth;
    let mut b = MacBreakdown::default();

    // Pyramid analysis: separable blur + decimation, then upsampled
    // low-passes for the band differences.
    for k in 0..d {
        let (hk, wk) = (h >> k, w >> k);
        b.conv += 5 * (3 * hk * (wk / 2)) as u64; // width-axis blur taps
        b.conv += 5 * (3 * (hk / 2) * (wk / 2)) as u64; // height-axis blur taps
        b.interpolation += resize_macs(3, hk, wk); // band reference upsample
    }

    // Low-frequency restoration at the residual extent.
    let (rh, rw) = (h >> d, w >> d);
    let c = cfg.lffpm.base_width;
    let e = cfg.lffpm.ffn_expansion;
    b.conv += conv_macs(3, c, 3, 1, rh, rw); // embed
    for _ in 0..cfg.lffpm.n_fetb {
        transformer_block(&mut b, c, e, rh, rw);
    }
    for l in 0..cfg.lffpm.unet_depth {
        let (hl, wl) = (rh >> l, rw >> l);
        let cl = cfg.lffpm.width_at(l);
        for _ in 0..cfg.lffpm.enc_blocks {
            conv_block(&mut b, cl, hl, wl);
        }
        b.conv += conv_macs(cl, 2 * cl, 3, 1, hl / 2, wl / 2); // down
    }
    let (bh, bw) = (rh >> cfg.lffpm.unet_depth, rw >> cfg.lffpm.unet_depth);
    let bc = cfg.lffpm.width_at(cfg.lffpm.unet_depth);
    for _ in 0..cfg.lffpm.bottleneck_blocks {
        conv_block(&mut b, bc, bh, bw);
    }
    for l in 0..cfg.lffpm.unet_depth {
        let (hl, wl) = (rh >> l, rw >> l);
        let cl = cfg.lffpm.width_at(l);
        b.conv += conv_macs(2 * cl, 4 * cl, 1, 1, hl / 2, wl / 2); // up (pre-shuffle)
        for _ in 0..cfg.lffpm.dec_blocks {
            conv_block(&mut b, cl, hl, wl);
        }
    }
    b.conv += conv_macs(cfg.lffpm.n_fetb * c, c, 1, 1, rh, rw); // feature fusion
    for _ in 0..cfg.lffpm.n_frtb {
        transformer_block(&mut b, c, e, rh, rw);
    }
    b.conv += conv_macs(c, 3, 3, 1, rh, rw); // head

    // High-frequency refinement, one stage per band.
    let mw = cfg.hfrm.mask_width;
    let rwid = cfg.hfrm.refine_width;
    for k in 0..d {
        let (hk, wk) = (h >> k, w >> k);
        // Context upsample (residual or coarser mask) and the progressively
        // upsampled restored residual: one of each per level.
        b.interpolation += 2 * resize_macs(3, hk, wk);
        b.conv += conv_macs(9, mw, 3, 1, hk, wk); // mask head
        b.conv += conv_macs(mw, 3, 3, 1, hk, wk); // mask out
        b.conv += conv_macs(3, rwid, 3, 1, hk, wk); // dilated embedding
        b.conv += 2 * linear_macs(rwid, rwid / cfg.hfrm.fab_reduction); // gate squeeze
        b.conv += conv_macs(rwid, 3, 1, 1, hk, wk); // feature-attention proj
    }
    // Pooling fusion at the finest band: three pooled maps resampled back,
    // then a 1x1 fuse over input + pooled slices.
    b.interpolation += 3 * resize_macs(3, h, w);
    b.conv += conv_macs(12, 3, 1, 1, h, w);

    // Synthesis: one upsample per level.
    for k in 0..d {
        let (hk, wk) = (h >> k, w >> k);
        b.interpolation += resize_macs(3, hk, wk);
    }
    Ok(b)
}

/// Total trainable scalars. Resolution never enters: the network is fully
/// convolutional/axis-wise.
pub fn count_params<F: crate::scalar::Real>(model: &mut dyn crate::nn::ParamOwner<F>) -> usize {
    crate::nn::param_count(model)
}
