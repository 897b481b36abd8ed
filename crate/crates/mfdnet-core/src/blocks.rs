//! Network building blocks.
//!
//! Two families:
//! - Transformer blocks ([`TransformerBlock`]): layer norm, axis-wise
//!   self-attention (a height pass then a width pass, each with its own
//!   projections), and a cross-gated feed-forward ([`Gffn`]), with residual
//!   connections around both halves.
//! - Convolution blocks ([`ConvBlock`]): layer norm, pointwise expansion,
//!   depthwise 3x3, multiplicative gating, channel attention
//!   ([`ChannelAttention`]), and a second gated pointwise stage, residual
//!   around both stages.
//!
//! Every block is constructed as an exact identity: the last projection of
//! each residual branch starts at zero, so a freshly initialized block maps
//! `x -> x` bit-for-bit (the residual add is `x + 0`). Earlier layers in each
//! branch keep random weights so gradients reach them as soon as the zero
//! projections move off zero.
//!
//! All blocks implement a `forward` / `forward_train` / `backward` triple:
//! inference retains nothing, training returns a cache holding exactly the
//! activations the hand-derived backward pass needs.

use crate::nn::act::{gelu, gelu_backward, relu, relu_backward, sigmoid_backward, sigmoid_scalar};
use crate::nn::{
    adaptive_avg_pool, adaptive_avg_pool_backward, bilinear_resize, bilinear_resize_backward,
    global_avg_pool, global_avg_pool_backward, Axis, AxisAttention, AxisAttentionCache, Conv2d,
    Init, LayerNorm2d, Linear, Param, ParamOwner,
};
use crate::scalar::Real;
use crate::tensor::Tensor;
use alloc::format;
use alloc::vec::Vec;

/// Uniform interface for same-shape blocks, so stages that chain several
/// blocks can share their forward/backward plumbing.
pub trait UnaryBlock<F: Real>: ParamOwner<F> {
    type Cache;
    fn forward(&self, x: &Tensor<F>) -> Tensor<F>;
    fn forward_train(&self, x: &Tensor<F>) -> (Tensor<F>, Self::Cache);
    fn backward(&mut self, x: &Tensor<F>, cache: &Self::Cache, gy: &Tensor<F>) -> Tensor<F>;
}

/// Inputs and caches for a chain of blocks: `ins[i]` is what block `i` saw.
pub struct ChainCache<F, C> {
    pub ins: Vec<Tensor<F>>,
    pub caches: Vec<C>,
}

pub fn chain_forward<F: Real, B: UnaryBlock<F>>(blocks: &[B], x: &Tensor<F>) -> Tensor<F> {
    let mut cur = x.clone();
    for b in blocks {
        cur = b.forward(&cur);
    }
    cur
}

pub fn chain_forward_train<F: Real, B: UnaryBlock<F>>(
    blocks: &[B],
    x: &Tensor<F>,
) -> (Tensor<F>, ChainCache<F, B::Cache>) {
    let mut ins = Vec::with_capacity(blocks.len());
    let mut caches = Vec::with_capacity(blocks.len());
    let mut cur = x.clone();
    for b in blocks {
        let (next, cache) = b.forward_train(&cur);
        ins.push(cur);
        caches.push(cache);
        cur = next;
    }
    (cur, ChainCache { ins, caches })
}

pub fn chain_backward<F: Real, B: UnaryBlock<F>>(
    blocks: &mut [B],
    cache: &ChainCache<F, B::Cache>,
    gy: &Tensor<F>,
) -> Tensor<F> {
    let mut g = gy.clone();
    for i in (0..blocks.len()).rev() {
        g = blocks[i].backward(&cache.ins[i], &cache.caches[i], &g);
    }
    g
}

// ---------------------------------------------------------------------------
// Gate: split channels in half, multiply the halves.
// ---------------------------------------------------------------------------

/// `gate(x)[c] = x[c] * x[c + C/2]` for `c < C/2`. Channel count must be even.
pub fn gate<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let (n, c, h, w) = x.shape();
    assert!(c % 2 == 0, "gate needs an even channel count, got {c}");
    let half = c / 2;
    let mut y = Tensor::zeros(n, half, h, w);
    for ni in 0..n {
        for ci in 0..half {
            let a = x.plane(ni, ci);
            let b = x.plane(ni, ci + half);
            for ((o, &av), &bv) in y.plane_mut(ni, ci).iter_mut().zip(a).zip(b) {
                *o = av * bv;
            }
        }
    }
    y
}

/// Backward of [`gate`]: product rule onto both halves.
pub fn gate_backward<F: Real>(x: &Tensor<F>, gy: &Tensor<F>) -> Tensor<F> {
    let (n, c, _, _) = x.shape();
    let half = c / 2;
    debug_assert_eq!(gy.channels(), half);
    let mut gx = x.zeros_like();
    for ni in 0..n {
        for ci in 0..half {
            let a = x.plane(ni, ci);
            let b = x.plane(ni, ci + half);
            let g = gy.plane(ni, ci);
            // Two separate scopes: planes of gx do not overlap.
            {
                let ga = gx.plane_mut(ni, ci);
                for ((o, &gv), &bv) in ga.iter_mut().zip(g).zip(b) {
                    *o = gv * bv;
                }
            }
            {
                let gb = gx.plane_mut(ni, ci + half);
                for ((o, &gv), &av) in gb.iter_mut().zip(g).zip(a) {
                    *o = gv * av;
                }
            }
        }
    }
    gx
}

// ---------------------------------------------------------------------------
// Channel attention: rescale channels by a linear map of the pooled vector.
// ---------------------------------------------------------------------------

/// Channel attention: `y[c] = x[c] * s[c]` where `s = W * avgpool(x) + b`.
/// The scale is a plain linear map of the pooled descriptor — no squashing —
/// so the block can amplify as well as suppress channels.
#[derive(Debug, Clone)]
pub struct ChannelAttention<F> {
    pub fc: Linear<F>,
}

#[derive(Debug, Clone)]
pub struct ChannelAttentionCache<F> {
    pooled: Tensor<F>,
    scale: Tensor<F>,
}

impl<F: Real> ChannelAttention<F> {
    pub fn new(name: &str, c: usize, seed: u64) -> Self {
        ChannelAttention {
            fc: Linear::new(&format!("{name}.fc"), c, c, Init::FanInUniform, seed),
        }
    }

    fn apply_scale(x: &Tensor<F>, scale: &Tensor<F>) -> Tensor<F> {
        let (n, c, _, _) = x.shape();
        let mut y = x.clone();
        for ni in 0..n {
            for ci in 0..c {
                let s = scale.at(ni, ci, 0, 0);
                for v in y.plane_mut(ni, ci) {
                    *v *= s;
                }
            }
        }
        y
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        let pooled = global_avg_pool(x);
        let scale = self.fc.forward(&pooled);
        Self::apply_scale(x, &scale)
    }

    pub fn forward_train(&self, x: &Tensor<F>) -> (Tensor<F>, ChannelAttentionCache<F>) {
        let pooled = global_avg_pool(x);
        let scale = self.fc.forward(&pooled);
        let y = Self::apply_scale(x, &scale);
        (y, ChannelAttentionCache { pooled, scale })
    }

    pub fn backward(
        &mut self,
        x: &Tensor<F>,
        cache: &ChannelAttentionCache<F>,
        gy: &Tensor<F>,
    ) -> Tensor<F> {
        let (n, c, h, w) = x.shape();
        // y = x * s (per channel): gradient splits into the direct path and
        // the path through s = fc(pool(x)).
        let mut g_scale = Tensor::zeros(n, c, 1, 1);
        let mut gx = x.zeros_like();
        for ni in 0..n {
            for ci in 0..c {
                let s = cache.scale.at(ni, ci, 0, 0);
                let mut acc = F::ZERO;
                let xs = x.plane(ni, ci);
                let gs = gy.plane(ni, ci);
                let dst = gx.plane_mut(ni, ci);
                for ((d, &gv), &xv) in dst.iter_mut().zip(gs).zip(xs) {
                    *d = gv * s;
                    acc += gv * xv;
                }
                *g_scale.at_mut(ni, ci, 0, 0) = acc;
            }
        }
        let g_pooled = self.fc.backward(&cache.pooled, &g_scale);
        gx.add_assign(&global_avg_pool_backward(&g_pooled, h, w));
        gx
    }
}

impl<F: Real> ParamOwner<F> for ChannelAttention<F> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.fc.visit_params(f);
    }
}

// ---------------------------------------------------------------------------
// Gated feed-forward with cross-gating GELU.
// ---------------------------------------------------------------------------

/// Two expansion branches gate each other: `gelu(A x) * (B x) + gelu(B x) * (A x)`,
/// then a zero-initialized projection back to the block width.
#[derive(Debug, Clone)]
pub struct Gffn<F> {
    pub proj_a: Conv2d<F>,
    pub proj_b: Conv2d<F>,
    pub proj_out: Conv2d<F>,
}

#[derive(Debug, Clone)]
pub struct GffnCache<F> {
    a: Tensor<F>,
    b: Tensor<F>,
    mixed: Tensor<F>,
}

impl<F: Real> Gffn<F> {
    pub fn new(name: &str, c: usize, expansion: usize, seed: u64) -> Self {
        let e = c * expansion;
        Gffn {
            proj_a: Conv2d::pointwise(&format!("{name}.a"), c, e, Init::FanInUniform, seed),
            proj_b: Conv2d::pointwise(&format!("{name}.b"), c, e, Init::FanInUniform, seed),
            proj_out: Conv2d::pointwise(&format!("{name}.out"), e, c, Init::Zero, seed),
        }
    }

    fn mix(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
        let ga = gelu(a);
        let gb = gelu(b);
        let mut m = ga.hadamard(b);
        m.add_assign(&gb.hadamard(a));
        m
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        let a = self.proj_a.forward(x);
        let b = self.proj_b.forward(x);
        self.proj_out.forward(&Self::mix(&a, &b))
    }

    pub fn forward_train(&self, x: &Tensor<F>) -> (Tensor<F>, GffnCache<F>) {
        let a = self.proj_a.forward(x);
        let b = self.proj_b.forward(x);
        let mixed = Self::mix(&a, &b);
        let y = self.proj_out.forward(&mixed);
        (y, GffnCache { a, b, mixed })
    }

    pub fn backward(&mut self, x: &Tensor<F>, cache: &GffnCache<F>, gy: &Tensor<F>) -> Tensor<F> {
        let gm = self.proj_out.backward(&cache.mixed, gy);
        // m = gelu(a) * b + gelu(b) * a
        // dm/da = gelu'(a) * b + gelu(b) ; dm/db = gelu(a) + gelu'(b) * a
        let ga_act = gelu(&cache.a);
        let gb_act = gelu(&cache.b);
        let da_act = gelu_backward(&cache.a, &gm.hadamard(&cache.b));
        let db_act = gelu_backward(&cache.b, &gm.hadamard(&cache.a));
        let mut g_a = da_act;
        g_a.add_assign(&gm.hadamard(&gb_act));
        let mut g_b = db_act;
        g_b.add_assign(&gm.hadamard(&ga_act));
        let mut gx = self.proj_a.backward(x, &g_a);
        gx.add_assign(&self.proj_b.backward(x, &g_b));
        gx
    }
}

impl<F: Real> ParamOwner<F> for Gffn<F> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.proj_a.visit_params(f);
        self.proj_b.visit_params(f);
        self.proj_out.visit_params(f);
    }
}

// ---------------------------------------------------------------------------
// Transformer block: LN -> axis attention (H then W) -> +x ; LN -> GFFN -> +.
// ---------------------------------------------------------------------------

/// Shared block for feature extraction and refinement stages. Starts as an
/// exact identity: the width-pass output projection and the feed-forward
/// output projection are zero-initialized, so both residual branches add 0.
#[derive(Debug, Clone)]
pub struct TransformerBlock<F> {
    pub norm1: LayerNorm2d<F>,
    pub attn_h: AxisAttention<F>,
    pub attn_w: AxisAttention<F>,
    pub norm2: LayerNorm2d<F>,
    pub ffn: Gffn<F>,
}

#[derive(Debug, Clone)]
pub struct TransformerBlockCache<F> {
    normed1: Tensor<F>,
    attn_h_cache: AxisAttentionCache<F>,
    after_h: Tensor<F>,
    attn_w_cache: AxisAttentionCache<F>,
    mid: Tensor<F>,
    normed2: Tensor<F>,
    ffn_cache: GffnCache<F>,
}

impl<F: Real> TransformerBlock<F> {
    pub fn new(name: &str, c: usize, heads: usize, expansion: usize, seed: u64) -> Self {
        TransformerBlock {
            norm1: LayerNorm2d::new(&format!("{name}.norm1"), c),
            attn_h: AxisAttention::new(&format!("{name}.attn_h"), c, heads, Axis::Height, false, seed),
            attn_w: AxisAttention::new(&format!("{name}.attn_w"), c, heads, Axis::Width, true, seed),
            norm2: LayerNorm2d::new(&format!("{name}.norm2"), c),
            ffn: Gffn::new(&format!("{name}.ffn"), c, expansion, seed),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        let t = self.norm1.forward(x);
        let a = self.attn_h.forward(&t);
        let b = self.attn_w.forward(&a);
        let mid = x.add(&b);
        let t2 = self.norm2.forward(&mid);
        let f = self.ffn.forward(&t2);
        mid.add(&f)
    }

    pub fn forward_train(&self, x: &Tensor<F>) -> (Tensor<F>, TransformerBlockCache<F>) {
        let normed1 = self.norm1.forward(x);
        let (after_h, attn_h_cache) = self.attn_h.forward_train(&normed1);
        let (b, attn_w_cache) = self.attn_w.forward_train(&after_h);
        let mid = x.add(&b);
        let normed2 = self.norm2.forward(&mid);
        let (f, ffn_cache) = self.ffn.forward_train(&normed2);
        let out = mid.add(&f);
        (
            out,
            TransformerBlockCache {
                normed1,
                attn_h_cache,
                after_h,
                attn_w_cache,
                mid,
                normed2,
                ffn_cache,
            },
        )
    }

    pub fn backward(
        &mut self,
        x: &Tensor<F>,
        cache: &TransformerBlockCache<F>,
        gy: &Tensor<F>,
    ) -> Tensor<F> {
        // out = mid + ffn(norm2(mid))
        let g_f = self.ffn.backward(&cache.normed2, &cache.ffn_cache, gy);
        let mut g_mid = self.norm2.backward(&cache.mid, &g_f);
        g_mid.add_assign(gy);
        // mid = x + attn_w(attn_h(norm1(x)))
        let g_a = self.attn_w.backward(&cache.after_h, &cache.attn_w_cache, &g_mid);
        let g_t = self.attn_h.backward(&cache.normed1, &cache.attn_h_cache, &g_a);
        let mut gx = self.norm1.backward(x, &g_t);
        gx.add_assign(&g_mid);
        gx
    }
}

impl<F: Real> ParamOwner<F> for TransformerBlock<F> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.norm1.visit_params(f);
        self.attn_h.visit_params(f);
        self.attn_w.visit_params(f);
        self.norm2.visit_params(f);
        self.ffn.visit_params(f);
    }
}

impl<F: Real> UnaryBlock<F> for TransformerBlock<F> {
    type Cache = TransformerBlockCache<F>;
    fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        TransformerBlock::forward(self, x)
    }
    fn forward_train(&self, x: &Tensor<F>) -> (Tensor<F>, Self::Cache) {
        TransformerBlock::forward_train(self, x)
    }
    fn backward(&mut self, x: &Tensor<F>, cache: &Self::Cache, gy: &Tensor<F>) -> Tensor<F> {
        TransformerBlock::backward(self, x, cache, gy)
    }
}

// ---------------------------------------------------------------------------
// Convolution block: gated depthwise stage with channel attention, then a
// gated pointwise stage. Used by both the encoder and decoder of the U-net.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ConvBlock<F> {
    pub norm1: LayerNorm2d<F>,
    pub expand1: Conv2d<F>,
    pub depthwise: Conv2d<F>,
    pub ca: ChannelAttention<F>,
    pub proj1: Conv2d<F>,
    pub norm2: LayerNorm2d<F>,
    pub expand2: Conv2d<F>,
    pub proj2: Conv2d<F>,
}

#[derive(Debug, Clone)]
pub struct ConvBlockCache<F> {
    normed1: Tensor<F>,
    expanded1: Tensor<F>,
    dw_out: Tensor<F>,
    gated1: Tensor<F>,
    ca_cache: ChannelAttentionCache<F>,
    ca_out: Tensor<F>,
    mid: Tensor<F>,
    normed2: Tensor<F>,
    expanded2: Tensor<F>,
    gated2: Tensor<F>,
}

impl<F: Real> ConvBlock<F> {
    pub fn new(name: &str, c: usize, seed: u64) -> Self {
        let e = 2 * c;
        ConvBlock {
            norm1: LayerNorm2d::new(&format!("{name}.norm1"), c),
            expand1: Conv2d::pointwise(&format!("{name}.expand1"), c, e, Init::FanInUniform, seed),
            depthwise: Conv2d::new(
                &format!("{name}.depthwise"),
                e,
                e,
                3,
                1,
                1,
                1,
                e,
                true,
                Init::FanInUniform,
                seed,
            ),
            ca: ChannelAttention::new(&format!("{name}.ca"), c, seed),
            proj1: Conv2d::pointwise(&format!("{name}.proj1"), c, c, Init::Zero, seed),
            norm2: LayerNorm2d::new(&format!("{name}.norm2"), c),
            expand2: Conv2d::pointwise(&format!("{name}.expand2"), c, e, Init::FanInUniform, seed),
            proj2: Conv2d::pointwise(&format!("{name}.proj2"), c, c, Init::Zero, seed),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        let t = self.norm1.forward(x);
        let e = self.expand1.forward(&t);
        let d = self.depthwise.forward(&e);
        let g = gate(&d);
        let a = self.ca.forward(&g);
        let mid = x.add(&self.proj1.forward(&a));
        let t2 = self.norm2.forward(&mid);
        let e2 = self.expand2.forward(&t2);
        let g2 = gate(&e2);
        mid.add(&self.proj2.forward(&g2))
    }

    pub fn forward_train(&self, x: &Tensor<F>) -> (Tensor<F>, ConvBlockCache<F>) {
        let normed1 = self.norm1.forward(x);
        let expanded1 = self.expand1.forward(&normed1);
        let dw_out = self.depthwise.forward(&expanded1);
        let gated1 = gate(&dw_out);
        let (ca_out, ca_cache) = self.ca.forward_train(&gated1);
        let mid = x.add(&self.proj1.forward(&ca_out));
        let normed2 = self.norm2.forward(&mid);
        let expanded2 = self.expand2.forward(&normed2);
        let gated2 = gate(&expanded2);
        let out = mid.add(&self.proj2.forward(&gated2));
        (
            out,
            ConvBlockCache {
                normed1,
                expanded1,
                dw_out,
                gated1,
                ca_cache,
                ca_out,
                mid,
                normed2,
                expanded2,
                gated2,
            },
        )
    }

    pub fn backward(
        &mut self,
        x: &Tensor<F>,
        cache: &ConvBlockCache<F>,
        gy: &Tensor<F>,
    ) -> Tensor<F> {
        // out = mid + proj2(gate(expand2(norm2(mid))))
        let g_g2 = self.proj2.backward(&cache.gated2, gy);
        let g_e2 = gate_backward(&cache.expanded2, &g_g2);
        let g_t2 = self.expand2.backward(&cache.normed2, &g_e2);
        let mut g_mid = self.norm2.backward(&cache.mid, &g_t2);
        g_mid.add_assign(gy);
        // mid = x + proj1(ca(gate(depthwise(expand1(norm1(x))))))
        let g_ca = self.proj1.backward(&cache.ca_out, &g_mid);
        let g_g1 = self.ca.backward(&cache.gated1, &cache.ca_cache, &g_ca);
        let g_d = gate_backward(&cache.dw_out, &g_g1);
        let g_e1 = self.depthwise.backward(&cache.expanded1, &g_d);
        let g_t1 = self.expand1.backward(&cache.normed1, &g_e1);
        let mut gx = self.norm1.backward(x, &g_t1);
        gx.add_assign(&g_mid);
        gx
    }
}

impl<F: Real> ParamOwner<F> for ConvBlock<F> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.norm1.visit_params(f);
        self.expand1.visit_params(f);
        self.depthwise.visit_params(f);
        self.ca.visit_params(f);
        self.proj1.visit_params(f);
        self.norm2.visit_params(f);
        self.expand2.visit_params(f);
        self.proj2.visit_params(f);
    }
}

impl<F: Real> UnaryBlock<F> for ConvBlock<F> {
    type Cache = ConvBlockCache<F>;
    fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        ConvBlock::forward(self, x)
    }
    fn forward_train(&self, x: &Tensor<F>) -> (Tensor<F>, Self::Cache) {
        ConvBlock::forward_train(self, x)
    }
    fn backward(&mut self, x: &Tensor<F>, cache: &Self::Cache, gy: &Tensor<F>) -> Tensor<F> {
        ConvBlock::backward(self, x, cache, gy)
    }
}

// ---------------------------------------------------------------------------
// Feature attention: squeeze-excitation gate plus output projection.
// ---------------------------------------------------------------------------

/// Channel gate `sigmoid(W2 relu(W1 pool(x)))` applied to `x`, followed by a
/// 1x1 projection to the output width.
///
/// Initialization keeps the surrounding refinement path an exact identity:
/// `W2` starts at zero so every gate value is sigmoid(0) = 0.5, and the
/// caller sets the projection to compensate (see the refinement module).
/// `W1` starts random so the gate has a nonzero gradient from step one.
#[derive(Debug, Clone)]
pub struct Fab<F> {
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
    pub proj: Conv2d<F>,
    c: usize,
}

#[derive(Debug, Clone)]
pub struct FabCache<F> {
    pooled: Tensor<F>,
    hidden_pre: Tensor<F>,
    hidden: Tensor<F>,
    gate_vals: Tensor<F>,
    scaled: Tensor<F>,
}

impl<F: Real> Fab<F> {
    pub fn new(name: &str, c: usize, reduction: usize, c_out: usize, seed: u64) -> Self {
        assert!(reduction >= 1 && c % reduction == 0,
            "feature attention width {c} must divide by reduction {reduction}");
        Fab {
            fc1: Linear::new(&format!("{name}.fc1"), c, c / reduction, Init::FanInUniform, seed),
            fc2: Linear::new(&format!("{name}.fc2"), c / reduction, c, Init::Zero, seed),
            proj: Conv2d::pointwise(&format!("{name}.proj"), c, c_out, Init::Zero, seed),
            c,
        }
    }

    fn gate_values(&self, x: &Tensor<F>) -> (Tensor<F>, Tensor<F>, Tensor<F>, Tensor<F>) {
        let pooled = global_avg_pool(x);
        let hidden_pre = self.fc1.forward(&pooled);
        let hidden = relu(&hidden_pre);
        let gate_vals = self.fc2.forward(&hidden).map(sigmoid_scalar);
        (pooled, hidden_pre, hidden, gate_vals)
    }

    fn scale(x: &Tensor<F>, s: &Tensor<F>) -> Tensor<F> {
        let (n, c, _, _) = x.shape();
        let mut y = x.clone();
        for ni in 0..n {
            for ci in 0..c {
                let sv = s.at(ni, ci, 0, 0);
                for v in y.plane_mut(ni, ci) {
                    *v *= sv;
                }
            }
        }
        y
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        let (_, _, _, gate_vals) = self.gate_values(x);
        self.proj.forward(&Self::scale(x, &gate_vals))
    }

    pub fn forward_train(&self, x: &Tensor<F>) -> (Tensor<F>, FabCache<F>) {
        let (pooled, hidden_pre, hidden, gate_vals) = self.gate_values(x);
        let scaled = Self::scale(x, &gate_vals);
        let y = self.proj.forward(&scaled);
        (
            y,
            FabCache {
                pooled,
                hidden_pre,
                hidden,
                gate_vals,
                scaled,
            },
        )
    }

    pub fn backward(&mut self, x: &Tensor<F>, cache: &FabCache<F>, gy: &Tensor<F>) -> Tensor<F> {
        let (n, c, h, w) = x.shape();
        debug_assert_eq!(c, self.c);
        let g_scaled = self.proj.backward(&cache.scaled, gy);
        // scaled = x * g (per channel)
        let mut g_gate = Tensor::zeros(n, c, 1, 1);
        let mut gx = x.zeros_like();
        for ni in 0..n {
            for ci in 0..c {
                let sv = cache.gate_vals.at(ni, ci, 0, 0);
                let mut acc = F::ZERO;
                let xs = x.plane(ni, ci);
                let gs = g_scaled.plane(ni, ci);
                let dst = gx.plane_mut(ni, ci);
                for ((d, &gv), &xv) in dst.iter_mut().zip(gs).zip(xs) {
                    *d = gv * sv;
                    acc += gv * xv;
                }
                *g_gate.at_mut(ni, ci, 0, 0) = acc;
            }
        }
        let g_logits = sigmoid_backward(&cache.gate_vals, &g_gate);
        let g_hidden = self.fc2.backward(&cache.hidden, &g_logits);
        let g_hidden_pre = relu_backward(&cache.hidden_pre, &g_hidden);
        let g_pooled = self.fc1.backward(&cache.pooled, &g_hidden_pre);
        gx.add_assign(&global_avg_pool_backward(&g_pooled, h, w));
        gx
    }
}

impl<F: Real> ParamOwner<F> for Fab<F> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.fc1.visit_params(f);
        self.fc2.visit_params(f);
        self.proj.visit_params(f);
    }
}

// ---------------------------------------------------------------------------
// Spatial pyramid pooling fusion.
// ---------------------------------------------------------------------------

/// Pool the input to fixed grids (1x1, 2x2, 4x4), upsample each pooled map
/// back to the input size, concatenate with the input, and fuse with a 1x1
/// convolution. The fusion starts as the identity on the input slice (pooled
/// slices weighted zero), so the block initially passes `x` through exactly.
#[derive(Debug, Clone)]
pub struct Spp<F> {
    pub fuse: Conv2d<F>,
    grids: [usize; 3],
    c: usize,
}

#[derive(Debug, Clone)]
pub struct SppCache<F> {
    concat: Tensor<F>,
}

impl<F: Real> Spp<F> {
    pub const GRIDS: [usize; 3] = [1, 2, 4];

    pub fn new(name: &str, c: usize, seed: u64) -> Self {
        let mut fuse = Conv2d::pointwise(
            &format!("{name}.fuse"),
            c * (1 + Self::GRIDS.len()),
            c,
            Init::Zero,
            seed,
        );
        // Identity on the raw-input slice of the concatenation.
        for ci in 0..c {
            let i = fuse.w.v.idx(ci, ci, 0, 0);
            fuse.w.v.data_mut()[i] = F::ONE;
        }
        Spp {
            fuse,
            grids: Self::GRIDS,
            c,
        }
    }

    fn build_concat(&self, x: &Tensor<F>) -> Tensor<F> {
        let (_, _, h, w) = x.shape();
        let mut parts: Vec<Tensor<F>> = Vec::with_capacity(self.grids.len());
        for &g in &self.grids {
            let pooled = adaptive_avg_pool(x, g, g);
            parts.push(bilinear_resize(&pooled, h, w));
        }
        let mut refs: Vec<&Tensor<F>> = Vec::with_capacity(1 + parts.len());
        refs.push(x);
        refs.extend(parts.iter());
        Tensor::concat_channels(&refs).expect("spp concat shapes agree by construction")
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        self.fuse.forward(&self.build_concat(x))
    }

    pub fn forward_train(&self, x: &Tensor<F>) -> (Tensor<F>, SppCache<F>) {
        let concat = self.build_concat(x);
        let y = self.fuse.forward(&concat);
        (y, SppCache { concat })
    }

    pub fn backward(&mut self, x: &Tensor<F>, cache: &SppCache<F>, gy: &Tensor<F>) -> Tensor<F> {
        let (_, _, h, w) = x.shape();
        let g_cat = self.fuse.backward(&cache.concat, gy);
        let mut gx = g_cat.slice_channels(0, self.c);
        for (gi, &g) in self.grids.iter().enumerate() {
            let g_up = g_cat.slice_channels((gi + 1) * self.c, self.c);
            let g_pooled = bilinear_resize_backward(&g_up, g, g);
            gx.add_assign(&adaptive_avg_pool_backward(&g_pooled, h, w));
        }
        gx
    }
}

impl<F: Real> ParamOwner<F> for Spp<F> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.fuse.visit_params(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::zero_grads;

    fn random(shape: (usize, usize, usize, usize), seed: u64) -> Tensor<f64> {
        let mut rng = crate::rng::Rng::new(seed);
        let mut t = Tensor::zeros(shape.0, shape.1, shape.2, shape.3);
        for v in t.data_mut() {
            *v = rng.normal();
        }
        t
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn gate_multiplies_matching_half_channels() {
        // Channels [2, 3] and [5, 7] at one pixel -> [10, 21].
        let x = Tensor::from_vec(1, 4, 1, 1, alloc::vec![2.0f64, 3.0, 5.0, 7.0]).unwrap();
        let y = gate(&x);
        assert_eq!(y.data(), &[10.0, 21.0]);
    }

    #[test]
    fn gate_backward_matches_product_rule() {
        let x = random((2, 6, 3, 4), 1);
        let gy = random((2, 3, 3, 4), 2);
        let gx = gate_backward(&x, &gy);
        let eps = 1e-6;
        for i in 0..x.numel() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let fd = (dot(&gate(&xp), &gy) - dot(&gate(&xm), &gy)) / (2.0 * eps);
            assert!((fd - gx.data()[i]).abs() < 1e-7, "gx[{i}]");
        }
    }

    #[test]
    fn channel_attention_small_case_by_hand() {
        // One sample, two channels of 1x2 pixels: x = [[1, 3], [2, 6]].
        // Pooled = [2, 4]. With W = [[0.5, 0], [0.25, 0.25]], b = 0:
        // s = [1.0, 1.5], so y = [[1, 3], [3, 9]].
        let mut ca = ChannelAttention::<f64>::new("ca", 2, 0);
        ca.fc.w.v.data_mut().copy_from_slice(&[0.5, 0.0, 0.25, 0.25]);
        let x = Tensor::from_vec(1, 2, 1, 2, alloc::vec![1.0, 3.0, 2.0, 6.0]).unwrap();
        let y = ca.forward(&x);
        assert_eq!(y.data(), &[1.0, 3.0, 3.0, 9.0]);
    }

    #[test]
    fn transformer_block_is_identity_at_init() {
        let blk = TransformerBlock::<f64>::new("b", 8, 2, 2, 42);
        let x = random((2, 8, 6, 5), 3);
        let y = blk.forward(&x);
        assert_eq!(y, x, "freshly initialized block must pass input through exactly");
    }

    #[test]
    fn conv_block_is_identity_at_init() {
        let blk = ConvBlock::<f64>::new("b", 8, 43);
        let x = random((2, 8, 6, 5), 4);
        let y = blk.forward(&x);
        assert_eq!(y, x);
    }

    #[test]
    fn spp_is_identity_at_init_and_constant_preserving_always() {
        let spp = Spp::<f64>::new("s", 3, 44);
        let x = random((1, 3, 8, 8), 5);
        assert_eq!(spp.forward(&x), x);
        // With any fuse weights, pooling a constant image yields the same
        // constant in every slice.
        let mut spp2 = Spp::<f64>::new("s", 3, 45);
        for (i, v) in spp2.fuse.w.v.data_mut().iter_mut().enumerate() {
            *v = 0.01 * (i as f64 % 7.0) - 0.02;
        }
        let c = Tensor::<f64>::filled(1, 3, 8, 8, 0.5);
        let y = spp2.forward(&c);
        for ci in 0..3 {
            let v0 = y.at(0, ci, 0, 0);
            assert!(y.plane(0, ci).iter().all(|v| (v - v0).abs() < 1e-12));
        }
    }

    /// Generic block FD check: perturb inputs and a sample of parameters.
    fn check_block_gradients<C>(
        forward: &dyn Fn(&Tensor<f64>) -> Tensor<f64>,
        forward_train: &dyn Fn(&Tensor<f64>) -> (Tensor<f64>, C),
        backward: &mut dyn FnMut(&Tensor<f64>, &C, &Tensor<f64>) -> Tensor<f64>,
        x: &Tensor<f64>,
        gy: &Tensor<f64>,
        tol: f64,
    ) -> Tensor<f64> {
        let (y_train, cache) = forward_train(x);
        assert_eq!(y_train, forward(x), "train and inference forward must agree");
        let gx = backward(x, &cache, gy);
        let eps = 1e-6;
        for i in (0..x.numel()).step_by(7) {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let fd = (dot(&forward(&xp), gy) - dot(&forward(&xm), gy)) / (2.0 * eps);
            let got = gx.data()[i];
            assert!(
                (fd - got).abs() < tol * fd.abs().max(1.0),
                "gx[{i}]: fd {fd} vs analytic {got}"
            );
        }
        gx
    }

    #[test]
    fn transformer_block_backward_matches_finite_differences() {
        let mut blk = TransformerBlock::<f64>::new("b", 4, 2, 2, 7);
        // Move off the identity point so every path carries signal.
        blk.visit_params(&mut |p| {
            let mut rng = crate::rng::Rng::from_label(91, &p.name);
            for v in p.v.data_mut() {
                *v += 0.05 * rng.normal();
            }
        });
        let x = random((1, 4, 4, 4), 6);
        let gy = random((1, 4, 4, 4), 7);
        check_block_gradients(
            &|x| blk.forward(x),
            &|x| blk.forward_train(x),
            &mut |x, c, g| {
                let mut b = blk.clone();
                zero_grads(&mut b);
                b.backward(x, c, g)
            },
            &x,
            &gy,
            1e-5,
        );
    }

    #[test]
    fn conv_block_backward_matches_finite_differences() {
        let mut blk = ConvBlock::<f64>::new("b", 4, 8);
        blk.visit_params(&mut |p| {
            let mut rng = crate::rng::Rng::from_label(92, &p.name);
            for v in p.v.data_mut() {
                *v += 0.05 * rng.normal();
            }
        });
        let x = random((1, 4, 5, 6), 9);
        let gy = random((1, 4, 5, 6), 10);
        check_block_gradients(
            &|x| blk.forward(x),
            &|x| blk.forward_train(x),
            &mut |x, c, g| {
                let mut b = blk.clone();
                zero_grads(&mut b);
                b.backward(x, c, g)
            },
            &x,
            &gy,
            1e-5,
        );
    }

    #[test]
    fn fab_backward_matches_finite_differences() {
        let mut fab = Fab::<f64>::new("f", 8, 4, 3, 11);
        fab.visit_params(&mut |p| {
            let mut rng = crate::rng::Rng::from_label(93, &p.name);
            for v in p.v.data_mut() {
                *v += 0.1 * rng.normal();
            }
        });
        let x = random((2, 8, 4, 4), 11);
        let gy = random((2, 3, 4, 4), 12);
        check_block_gradients(
            &|x| fab.forward(x),
            &|x| fab.forward_train(x),
            &mut |x, c, g| {
                let mut b = fab.clone();
                zero_grads(&mut b);
                b.backward(x, c, g)
            },
            &x,
            &gy,
            1e-5,
        );
    }

    #[test]
    fn spp_backward_matches_finite_differences() {
        let mut spp = Spp::<f64>::new("s", 3, 13);
        spp.visit_params(&mut |p| {
            let mut rng = crate::rng::Rng::from_label(94, &p.name);
            for v in p.v.data_mut() {
                *v += 0.1 * rng.normal();
            }
        });
        let x = random((1, 3, 8, 8), 13);
        let gy = random((1, 3, 8, 8), 14);
        check_block_gradients(
            &|x| spp.forward(x),
            &|x| spp.forward_train(x),
            &mut |x, c, g| {
                let mut b = spp.clone();
                zero_grads(&mut b);
                b.backward(x, c, g)
            },
            &x,
            &gy,
            1e-5,
        );
    }

    #[test]
    fn gffn_backward_matches_finite_differences() {
        let mut ffn = Gffn::<f64>::new("g", 4, 2, 15);
        ffn.visit_params(&mut |p| {
            let mut rng = crate::rng::Rng::from_label(95, &p.name);
            for v in p.v.data_mut() {
                *v += 0.1 * rng.normal();
            }
        });
        let x = random((1, 4, 3, 3), 15);
        let gy = random((1, 4, 3, 3), 16);
        check_block_gradients(
            &|x| ffn.forward(x),
            &|x| ffn.forward_train(x),
            &mut |x, c, g| {
                let mut b = ffn.clone();
                zero_grads(&mut b);
                b.backward(x, c, g)
            },
            &x,
            &gy,
            1e-5,
        );
    }

    #[test]
    fn channel_attention_backward_matches_finite_differences() {
        let ca = ChannelAttention::<f64>::new("ca", 4, 17);
        let x = random((2, 4, 3, 3), 17);
        let gy = random((2, 4, 3, 3), 18);
        check_block_gradients(
            &|x| ca.forward(x),
            &|x| ca.forward_train(x),
            &mut |x, c, g| {
                let mut b = ca.clone();
                zero_grads(&mut b);
                b.backward(x, c, g)
            },
            &x,
            &gy,
            1e-5,
        );
    }

    #[test]
    fn fab_gate_opens_at_one_half_when_squeeze_weights_are_zero() {
        // With fc2 zero-initialized every gate value is sigmoid(0) = 0.5
        // regardless of input.
        let fab = Fab::<f64>::new("f", 8, 4, 3, 19);
        let x = random((1, 8, 4, 4), 19);
        let (_, _, _, gates) = fab.gate_values(&x);
        assert!(gates.data().iter().all(|&g| g == 0.5));
    }
}
