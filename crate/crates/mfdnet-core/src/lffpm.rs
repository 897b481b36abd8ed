//! Low-frequency restoration network.
//!
//! Operates on the pyramid residual (the heavily downsampled, flare-dominated
//! image). Pipeline:
//!
//! 1. 3x3 embedding from RGB to `base_width` channels.
//! 2. A run of transformer blocks (feature extraction); every block's output
//!    is kept for later fusion.
//! 3. A U-shaped encoder/decoder of convolution blocks: each encoder level
//!    ends with a strided 3x3 conv that halves resolution and doubles width;
//!    each decoder level starts with a 1x1 conv + pixel shuffle that doubles
//!    resolution and halves width, then adds the encoder skip.
//! 4. Fusion: the concatenated transformer-block outputs pass through a 1x1
//!    conv, then are combined with the U-net output through per-channel
//!    learned weights (`alpha * fused + beta * unet`, alpha starting at 0 and
//!    beta at 1, so the U-net path dominates initially).
//! 5. A run of refinement transformer blocks and a zero-initialized 3x3 head
//!    back to RGB, added to the input — the whole module starts as an exact
//!    identity.

use crate::blocks::{
    chain_backward, chain_forward, chain_forward_train, ChainCache, ConvBlock, ConvBlockCache,
    TransformerBlock, TransformerBlockCache,
};
use crate::error::{Error, Result};
use crate::nn::{pixel_shuffle, pixel_shuffle_backward, Conv2d, Init, Param, ParamOwner};
use crate::scalar::Real;
use crate::tensor::Tensor;
use alloc::format;
use alloc::vec::Vec;

/// Restoration-network hyperparameters. `default()` is the desk-scale
/// configuration used throughout the tests and CLI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LffpmConfig {
    /// Channel width at full resolution (doubles per encoder level).
    pub base_width: usize,
    /// Transformer blocks in the feature-extraction run.
    pub n_fetb: usize,
    /// Transformer blocks in the refinement run.
    pub n_frtb: usize,
    /// Number of downsampling stages in the U-net.
    pub unet_depth: usize,
    /// Convolution blocks per encoder level.
    pub enc_blocks: usize,
    /// Convolution blocks per decoder level.
    pub dec_blocks: usize,
    /// Convolution blocks at the bottleneck.
    pub bottleneck_blocks: usize,
    /// Attention heads in every transformer block.
    pub heads: usize,
    /// Feed-forward expansion factor.
    pub ffn_expansion: usize,
}

impl Default for LffpmConfig {
    fn default() -> Self {
        LffpmConfig {
            base_width: 16,
            n_fetb: 2,
            n_frtb: 2,
            unet_depth: 3,
            enc_blocks: 1,
            dec_blocks: 1,
            bottleneck_blocks: 1,
            heads: 2,
            ffn_expansion: 2,
        }
    }
}

impl LffpmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.base_width % 2 != 0 {
            return Err(Error::config(format!(
                "base_width must be even and nonzero, got {}",
                self.base_width
            )));
        }
        if self.heads == 0 || self.base_width % self.heads != 0 {
            return Err(Error::config(format!(
                "heads ({}) must divide base_width ({})",
                self.heads, self.base_width
            )));
        }
        if self.n_fetb == 0 || self.n_frtb == 0 {
            return Err(Error::config(
                "need at least one extraction and one refinement transformer block",
            ));
        }
        if self.unet_depth == 0 {
            return Err(Error::config("unet_depth must be at least 1"));
        }
        if self.enc_blocks == 0 || self.dec_blocks == 0 || self.bottleneck_blocks == 0 {
            return Err(Error::config("every U-net stage needs at least one block"));
        }
        if self.ffn_expansion == 0 {
            return Err(Error::config("ffn_expansion must be at least 1"));
        }
        Ok(())
    }

    /// Input extents must be divisible by this for the U-net to round-trip.
    pub fn divisor(&self) -> usize {
        1 << self.unet_depth
    }

    /// Channel width at encoder level `l`.
    pub fn width_at(&self, level: usize) -> usize {
        self.base_width << level
    }
}

pub struct Lffpm<F> {
    pub cfg: LffpmConfig,
    embed: Conv2d<F>,
    fetbs: Vec<TransformerBlock<F>>,
    enc: Vec<Vec<ConvBlock<F>>>,
    down: Vec<Conv2d<F>>,
    bottleneck: Vec<ConvBlock<F>>,
    up: Vec<Conv2d<F>>,
    dec: Vec<Vec<ConvBlock<F>>>,
    fuse_fetb: Conv2d<F>,
    alpha: Param<F>,
    beta: Param<F>,
    frtbs: Vec<TransformerBlock<F>>,
    head: Conv2d<F>,
}

pub struct LffpmCache<F> {
    fetb_chain: ChainCache<F, TransformerBlockCache<F>>,
    fetb_outs: Vec<Tensor<F>>,
    enc_chains: Vec<ChainCache<F, ConvBlockCache<F>>>,
    skips: Vec<Tensor<F>>,
    bottleneck_chain: ChainCache<F, ConvBlockCache<F>>,
    up_ins: Vec<Tensor<F>>,
    dec_chains: Vec<ChainCache<F, ConvBlockCache<F>>>,
    unet_out: Tensor<F>,
    fused: Tensor<F>,
    frtb_chain: ChainCache<F, TransformerBlockCache<F>>,
    head_in: Tensor<F>,
}

impl<F: Real> Lffpm<F> {
    pub fn new(name: &str, cfg: &LffpmConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.base_width;
        let embed = Conv2d::new(
            &format!("{name}.embed"),
            3,
            c,
            3,
            1,
            1,
            1,
            1,
            true,
            Init::FanInUniform,
            seed,
        );
        let fetbs = (0..cfg.n_fetb)
            .map(|i| {
                TransformerBlock::new(
                    &format!("{name}.fetb{i}"),
                    c,
                    cfg.heads,
                    cfg.ffn_expansion,
                    seed,
                )
            })
            .collect();
        let mut enc = Vec::with_capacity(cfg.unet_depth);
        let mut down = Vec::with_capacity(cfg.unet_depth);
        for l in 0..cfg.unet_depth {
            let w = cfg.width_at(l);
            enc.push(
                (0..cfg.enc_blocks)
                    .map(|i| ConvBlock::new(&format!("{name}.enc{l}.block{i}"), w, seed))
                    .collect::<Vec<_>>(),
            );
            down.push(Conv2d::new(
                &format!("{name}.down{l}"),
                w,
                w * 2,
                3,
                2,
                1,
                1,
                1,
                true,
                Init::FanInUniform,
                seed,
            ));
        }
        let bottom_w = cfg.width_at(cfg.unet_depth);
        let bottleneck = (0..cfg.bottleneck_blocks)
            .map(|i| ConvBlock::new(&format!("{name}.bottleneck.block{i}"), bottom_w, seed))
            .collect();
        let mut up = Vec::with_capacity(cfg.unet_depth);
        let mut dec = Vec::with_capacity(cfg.unet_depth);
        for l in 0..cfg.unet_depth {
            let w = cfg.width_at(l);
            // From width 2w at half resolution to width w at this level:
            // 1x1 to 4w channels, then pixel shuffle r=2.
            up.push(Conv2d::pointwise(
                &format!("{name}.up{l}"),
                w * 2,
                w * 4,
                Init::FanInUniform,
                seed,
            ));
            dec.push(
                (0..cfg.dec_blocks)
                    .map(|i| ConvBlock::new(&format!("{name}.dec{l}.block{i}"), w, seed))
                    .collect::<Vec<_>>(),
            );
        }
        let fuse_fetb = Conv2d::pointwise(
            &format!("{name}.fuse_fetb"),
            cfg.n_fetb * c,
            c,
            Init::FanInUniform,
            seed,
        );
        let alpha = Param::new(format!("{name}.alpha"), Tensor::zeros(1, c, 1, 1));
        let beta = Param::new(format!("{name}.beta"), Tensor::filled(1, c, 1, 1, F::ONE));
        let frtbs = (0..cfg.n_frtb)
            .map(|i| {
                TransformerBlock::new(
                    &format!("{name}.frtb{i}"),
                    c,
                    cfg.heads,
                    cfg.ffn_expansion,
                    seed,
                )
            })
            .collect();
        let head = Conv2d::new(
            &format!("{name}.head"),
            c,
            3,
            3,
            1,
            1,
            1,
            1,
            true,
            Init::Zero,
            seed,
        );
        Ok(Lffpm {
            cfg: cfg.clone(),
            embed,
            fetbs,
            enc,
            down,
            bottleneck,
            up,
            dec,
            fuse_fetb,
            alpha,
            beta,
            frtbs,
            head,
        })
    }

    fn check_input(&self, x: &Tensor<F>) -> Result<()> {
        let (_, c, h, w) = x.shape();
        if c != 3 {
            return Err(Error::dimension(format!(
                "restoration network expects RGB input, got {c} channels"
            )));
        }
        let div = self.cfg.divisor();
        if h % div != 0 || w % div != 0 || h / div == 0 || w / div == 0 {
            return Err(Error::dimension(format!(
                "input {h}x{w} must be divisible by {div} for {} U-net levels",
                self.cfg.unet_depth
            )));
        }
        Ok(())
    }

    /// Combine fused transformer features and U-net output with per-channel
    /// weights.
    fn combine(&self, fused: &Tensor<F>, unet: &Tensor<F>) -> Tensor<F> {
        let (n, c, _, _) = fused.shape();
        let mut out = unet.clone();
        for ni in 0..n {
            for ci in 0..c {
                let a = self.alpha.v.data()[ci];
                let b = self.beta.v.data()[ci];
                let f = fused.plane(ni, ci);
                for (o, &fv) in out.plane_mut(ni, ci).iter_mut().zip(f) {
                    *o = a * fv + b * *o;
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        self.check_input(x)?;
        let e = self.embed.forward(x);
        let mut fetb_outs = Vec::with_capacity(self.fetbs.len());
        let mut t = e;
        for blk in &self.fetbs {
            t = blk.forward(&t);
            fetb_outs.push(t.clone());
        }
        let mut u = t;
        let mut skips = Vec::with_capacity(self.cfg.unet_depth);
        for l in 0..self.cfg.unet_depth {
            u = chain_forward(&self.enc[l], &u);
            skips.push(u.clone());
            u = self.down[l].forward(&u);
        }
        u = chain_forward(&self.bottleneck, &u);
        for l in (0..self.cfg.unet_depth).rev() {
            u = pixel_shuffle(&self.up[l].forward(&u), 2);
            u.add_assign(&skips[l]);
            u = chain_forward(&self.dec[l], &u);
        }
        let refs: Vec<&Tensor<F>> = fetb_outs.iter().collect();
        let fused = self.fuse_fetb.forward(&Tensor::concat_channels(&refs)?);
        let mut g = self.combine(&fused, &u);
        for blk in &self.frtbs {
            g = blk.forward(&g);
        }
        Ok(x.add(&self.head.forward(&g)))
    }

    pub fn forward_train(&self, x: &Tensor<F>) -> Result<(Tensor<F>, LffpmCache<F>)> {
        self.check_input(x)?;
        let embedded = self.embed.forward(x);
        let (fetb_last, fetb_chain) = chain_forward_train(&self.fetbs, &embedded);
        // Chain inputs shifted by one are the per-block outputs.
        let mut fetb_outs: Vec<Tensor<F>> = fetb_chain.ins[1..].to_vec();
        fetb_outs.push(fetb_last.clone());

        let mut u = fetb_last;
        let mut enc_chains = Vec::with_capacity(self.cfg.unet_depth);
        let mut skips = Vec::with_capacity(self.cfg.unet_depth);
        for l in 0..self.cfg.unet_depth {
            let (out, chain) = chain_forward_train(&self.enc[l], &u);
            enc_chains.push(chain);
            skips.push(out.clone());
            u = self.down[l].forward(&out);
        }
        let (mut u2, bottleneck_chain) = chain_forward_train(&self.bottleneck, &u);
        let mut up_ins = Vec::with_capacity(self.cfg.unet_depth);
        let mut dec_chains: Vec<ChainCache<F, ConvBlockCache<F>>> =
            Vec::with_capacity(self.cfg.unet_depth);
        for l in (0..self.cfg.unet_depth).rev() {
            up_ins.push(u2.clone());
            let mut s = pixel_shuffle(&self.up[l].forward(&u2), 2);
            s.add_assign(&skips[l]);
            let (out, chain) = chain_forward_train(&self.dec[l], &s);
            dec_chains.push(chain);
            u2 = out;
        }
        // up_ins / dec_chains run coarsest-first; reverse into level order.
        up_ins.reverse();
        dec_chains.reverse();
        let unet_out = u2;

        let refs: Vec<&Tensor<F>> = fetb_outs.iter().collect();
        let fused = self.fuse_fetb.forward(&Tensor::concat_channels(&refs)?);
        let combined = self.combine(&fused, &unet_out);
        let (head_in, frtb_chain) = chain_forward_train(&self.frtbs, &combined);
        let y = x.add(&self.head.forward(&head_in));
        Ok((
            y,
            LffpmCache {
                fetb_chain,
                fetb_outs,
                enc_chains,
                skips,
                bottleneck_chain,
                up_ins,
                dec_chains,
                unet_out,
                fused,
                frtb_chain,
                head_in,
            },
        ))
    }

    pub fn backward(&mut self, x: &Tensor<F>, cache: &LffpmCache<F>, gy: &Tensor<F>) -> Tensor<F> {
        // y = x + head(frtbs(combined))
        let mut gx = gy.clone();
        let g_head_in = self.head.backward(&cache.head_in, gy);
        let g_combined = chain_backward(&mut self.frtbs, &cache.frtb_chain, &g_head_in);

        // combined = alpha * fused + beta * unet_out (per channel)
        let (n, c, _, _) = g_combined.shape();
        let mut g_fused = g_combined.zeros_like();
        let mut g_unet = g_combined.zeros_like();
        for ni in 0..n {
            for ci in 0..c {
                let a = self.alpha.v.data()[ci];
                let b = self.beta.v.data()[ci];
                let mut ga_acc = F::ZERO;
                let mut gb_acc = F::ZERO;
                let g = g_combined.plane(ni, ci);
                let f = cache.fused.plane(ni, ci);
                let uo = cache.unet_out.plane(ni, ci);
                {
                    let gf = g_fused.plane_mut(ni, ci);
                    for ((d, &gv), &fv) in gf.iter_mut().zip(g).zip(f) {
                        *d = gv * a;
                        ga_acc += gv * fv;
                    }
                }
                {
                    let gu = g_unet.plane_mut(ni, ci);
                    for ((d, &gv), &uv) in gu.iter_mut().zip(g).zip(uo) {
                        *d = gv * b;
                        gb_acc += gv * uv;
                    }
                }
                self.alpha.g.data_mut()[ci] += ga_acc;
                self.beta.g.data_mut()[ci] += gb_acc;
            }
        }

        // fused = fuse_fetb(concat(fetb_outs))
        let refs: Vec<&Tensor<F>> = cache.fetb_outs.iter().collect();
        let concat = Tensor::concat_channels(&refs).expect("shapes agree");
        let g_concat = self.fuse_fetb.backward(&concat, &g_fused);
        let cw = self.cfg.base_width;
        let mut g_fetb_outs: Vec<Tensor<F>> = (0..self.fetbs.len())
            .map(|i| g_concat.slice_channels(i * cw, cw))
            .collect();

        // U-net decoder, reversed: level 0 ran last.
        let mut g_u = g_unet;
        let mut g_skips: Vec<Option<Tensor<F>>> = (0..self.cfg.unet_depth).map(|_| None).collect();
        for l in 0..self.cfg.unet_depth {
            let g_after_skip = chain_backward(&mut self.dec[l], &cache.dec_chains[l], &g_u);
            g_skips[l] = Some(g_after_skip.clone());
            let g_shuffle_in = pixel_shuffle_backward(&g_after_skip, 2);
            g_u = self.up[l].backward(&cache.up_ins[l], &g_shuffle_in);
        }
        g_u = chain_backward(&mut self.bottleneck, &cache.bottleneck_chain, &g_u);
        // Encoder, reversed: level depth-1 ran last.
        for l in (0..self.cfg.unet_depth).rev() {
            let mut g_enc_out = self.down[l].backward(&cache.skips[l], &g_u);
            g_enc_out.add_assign(g_skips[l].as_ref().expect("set in decoder loop"));
            g_u = chain_backward(&mut self.enc[l], &cache.enc_chains[l], &g_enc_out);
        }

        // The U-net input is the last transformer block's output.
        let last = g_fetb_outs.len() - 1;
        g_fetb_outs[last].add_assign(&g_u);

        // Transformer chain: each block's output also fed the fusion concat.
        // Walk backward accumulating the per-block side gradients.
        let mut g = g_fetb_outs[last].clone();
        for i in (0..self.fetbs.len()).rev() {
            g = self.fetbs[i].backward(
                &cache.fetb_chain.ins[i],
                &cache.fetb_chain.caches[i],
                &g,
            );
            if i > 0 {
                g.add_assign(&g_fetb_outs[i - 1]);
            }
        }
        gx.add_assign(&self.embed.backward(x, &g));
        gx
    }
}

impl<F: Real> ParamOwner<F> for Lffpm<F> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.embed.visit_params(f);
        for b in &mut self.fetbs {
            b.visit_params(f);
        }
        for (blocks, d) in self.enc.iter_mut().zip(&mut self.down) {
            for b in blocks {
                b.visit_params(f);
            }
            d.visit_params(f);
        }
        for b in &mut self.bottleneck {
            b.visit_params(f);
        }
        for (u, blocks) in self.up.iter_mut().zip(&mut self.dec) {
            u.visit_params(f);
            for b in blocks {
                b.visit_params(f);
            }
        }
        self.fuse_fetb.visit_params(f);
        f(&mut self.alpha);
        f(&mut self.beta);
        for b in &mut self.frtbs {
            b.visit_params(f);
        }
        self.head.visit_params(f);
    }
}
