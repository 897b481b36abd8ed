//! Multi-head self-attention along a single spatial axis.
//!
//! Instead of attending over all H*W positions (quadratic in pixel count),
//! each pass attends along one axis: every column (Height axis) or every row
//! (Width axis) is an independent sequence. Two stacked passes give every
//! pixel a cross-shaped receptive field covering its full row and column at
//! linear-in-pixels sequence count.
//!
//! Q/K/V/output projections are 1x1 convolutions. Logits are scaled by
//! `1/sqrt(head_dim)` and softmax subtracts the row max before
//! exponentiating. Inference (`forward`) streams without retaining anything;
//! training (`forward_train`) caches Q, K, V, the attention weights, and the
//! pre-projection output for the hand-derived backward pass.

use super::conv::Conv2d;
use super::{Init, Param, ParamOwner};
use crate::scalar::Real;
use crate::tensor::Tensor;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Height,
    Width,
}

#[derive(Debug, Clone)]
pub struct AxisAttention<F> {
    pub wq: Conv2d<F>,
    pub wk: Conv2d<F>,
    pub wv: Conv2d<F>,
    pub wo: Conv2d<F>,
    axis: Axis,
    heads: usize,
}

/// Training-time activations retained for backward.
#[derive(Debug, Clone)]
pub struct AxisAttentionCache<F> {
    q: Tensor<F>,
    k: Tensor<F>,
    v: Tensor<F>,
    /// Softmax weights, layout `[n][other][head][query][key]`.
    attn: Vec<F>,
    attended: Tensor<F>,
}

impl<F: Real> AxisAttention<F> {
    /// `zero_out` zero-initializes the output projection so the enclosing
    /// residual block starts as an identity.
    pub fn new(name: &str, c: usize, heads: usize, axis: Axis, zero_out: bool, seed: u64) -> Self {
        assert!(heads >= 1 && c % heads == 0, "attention width {c} must divide into {heads} heads");
        let out_init = if zero_out { Init::Zero } else { Init::FanInUniform };
        AxisAttention {
            wq: Conv2d::pointwise(&format!("{name}.query"), c, c, Init::FanInUniform, seed),
            wk: Conv2d::pointwise(&format!("{name}.key"), c, c, Init::FanInUniform, seed),
            wv: Conv2d::pointwise(&format!("{name}.value"), c, c, Init::FanInUniform, seed),
            wo: Conv2d::pointwise(&format!("{name}.out"), c, c, out_init, seed),
            axis,
            heads,
        }
    }

    #[inline]
    fn seq_dims(&self, h: usize, w: usize) -> (usize, usize) {
        match self.axis {
            Axis::Height => (h, w),
            Axis::Width => (w, h),
        }
    }

    #[inline]
    fn yx(&self, pos: usize, other: usize) -> (usize, usize) {
        match self.axis {
            Axis::Height => (pos, other),
            Axis::Width => (other, pos),
        }
    }

    /// Attention core: softmax(Q K^T / sqrt(d)) V along the axis.
    /// Writes attention weights into `attn_out` when provided.
    fn attend(
        &self,
        q: &Tensor<F>,
        k: &Tensor<F>,
        v: &Tensor<F>,
        mut attn_out: Option<&mut Vec<F>>,
    ) -> Tensor<F> {
        let (n, c, h, w) = q.shape();
        let (len, other_len) = self.seq_dims(h, w);
        let dh = c / self.heads;
        let scale = F::from_f64(1.0 / libm::sqrt(dh as f64));
        let mut out = q.zeros_like();
        // Scratch: per-sequence Q/K/V copies keep the inner loops contiguous.
        let mut qs = vec![F::ZERO; len * dh];
        let mut ks = vec![F::ZERO; len * dh];
        let mut vs = vec![F::ZERO; len * dh];
        let mut logits = vec![F::ZERO; len * len];

        for ni in 0..n {
            for m in 0..other_len {
                for head in 0..self.heads {
                    let c0 = head * dh;
                    for pos in 0..len {
                        let (y, x) = self.yx(pos, m);
                        for d in 0..dh {
                            qs[pos * dh + d] = q.at(ni, c0 + d, y, x);
                            ks[pos * dh + d] = k.at(ni, c0 + d, y, x);
                            vs[pos * dh + d] = v.at(ni, c0 + d, y, x);
                        }
                    }
                    for i in 0..len {
                        let qi = &qs[i * dh..(i + 1) * dh];
                        // Scaled dot-product logits, then max-subtracted softmax.
                        let mut row_max = F::from_f64(f64::NEG_INFINITY);
                        for j in 0..len {
                            let kj = &ks[j * dh..(j + 1) * dh];
                            let mut dot = F::ZERO;
                            for d in 0..dh {
                                dot += qi[d] * kj[d];
                            }
                            let l = dot * scale;
                            logits[i * len + j] = l;
                            row_max = row_max.max(l);
                        }
                        let mut denom = F::ZERO;
                        for j in 0..len {
                            let e = (logits[i * len + j] - row_max).exp();
                            logits[i * len + j] = e;
                            denom += e;
                        }
                        let inv = F::ONE / denom;
                        for j in 0..len {
                            logits[i * len + j] *= inv;
                        }
                    }
                    if let Some(sink) = attn_out.as_deref_mut() {
                        sink.extend_from_slice(&logits[..len * len]);
                    }
                    for i in 0..len {
                        let (y, x) = self.yx(i, m);
                        for d in 0..dh {
                            let mut acc = F::ZERO;
                            for j in 0..len {
                                acc += logits[i * len + j] * vs[j * dh + d];
                            }
                            *out.at_mut(ni, c0 + d, y, x) = acc;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        let q = self.wq.forward(x);
        let k = self.wk.forward(x);
        let v = self.wv.forward(x);
        let attended = self.attend(&q, &k, &v, None);
        self.wo.forward(&attended)
    }

    pub fn forward_train(&self, x: &Tensor<F>) -> (Tensor<F>, AxisAttentionCache<F>) {
        let q = self.wq.forward(x);
        let k = self.wk.forward(x);
        let v = self.wv.forward(x);
        let (n, _, h, w) = q.shape();
        let (len, other_len) = self.seq_dims(h, w);
        let mut attn = Vec::with_capacity(n * other_len * self.heads * len * len);
        let attended = self.attend(&q, &k, &v, Some(&mut attn));
        let y = self.wo.forward(&attended);
        (
            y,
            AxisAttentionCache {
                q,
                k,
                v,
                attn,
                attended,
            },
        )
    }

    pub fn backward(
        &mut self,
        x: &Tensor<F>,
        cache: &AxisAttentionCache<F>,
        gy: &Tensor<F>,
    ) -> Tensor<F> {
        let g_attended = self.wo.backward(&cache.attended, gy);

        let (n, c, h, w) = cache.q.shape();
        let (len, other_len) = self.seq_dims(h, w);
        let dh = c / self.heads;
        let scale = F::from_f64(1.0 / libm::sqrt(dh as f64));
        let mut gq = cache.q.zeros_like();
        let mut gk = cache.k.zeros_like();
        let mut gv = cache.v.zeros_like();

        let mut qs = vec![F::ZERO; len * dh];
        let mut ks = vec![F::ZERO; len * dh];
        let mut vs = vec![F::ZERO; len * dh];
        let mut go = vec![F::ZERO; len * dh];
        let mut gqs = vec![F::ZERO; len * dh];
        let mut gks = vec![F::ZERO; len * dh];
        let mut gvs = vec![F::ZERO; len * dh];
        let mut ga = vec![F::ZERO; len * len];

        let mut attn_off = 0usize;
        for ni in 0..n {
            for m in 0..other_len {
                for head in 0..self.heads {
                    let c0 = head * dh;
                    for pos in 0..len {
                        let (y, x_) = self.yx(pos, m);
                        for d in 0..dh {
                            qs[pos * dh + d] = cache.q.at(ni, c0 + d, y, x_);
                            ks[pos * dh + d] = cache.k.at(ni, c0 + d, y, x_);
                            vs[pos * dh + d] = cache.v.at(ni, c0 + d, y, x_);
                            go[pos * dh + d] = g_attended.at(ni, c0 + d, y, x_);
                        }
                    }
                    let a = &cache.attn[attn_off..attn_off + len * len];
                    attn_off += len * len;
                    for e in gqs.iter_mut().chain(gks.iter_mut()).chain(gvs.iter_mut()) {
                        *e = F::ZERO;
                    }
                    // gV = A^T gO ; gA = gO V^T.
                    for i in 0..len {
                        for j in 0..len {
                            let aij = a[i * len + j];
                            let mut dot = F::ZERO;
                            for d in 0..dh {
                                gvs[j * dh + d] += aij * go[i * dh + d];
                                dot += go[i * dh + d] * vs[j * dh + d];
                            }
                            ga[i * len + j] = dot;
                        }
                    }
                    // Softmax backward per query row, then into Q and K.
                    for i in 0..len {
                        let mut inner = F::ZERO;
                        for j in 0..len {
                            inner += a[i * len + j] * ga[i * len + j];
                        }
                        for j in 0..len {
                            let gl = a[i * len + j] * (ga[i * len + j] - inner) * scale;
                            for d in 0..dh {
                                gqs[i * dh + d] += gl * ks[j * dh + d];
                                gks[j * dh + d] += gl * qs[i * dh + d];
                            }
                        }
                    }
                    for pos in 0..len {
                        let (y, x_) = self.yx(pos, m);
                        for d in 0..dh {
                            *gq.at_mut(ni, c0 + d, y, x_) = gqs[pos * dh + d];
                            *gk.at_mut(ni, c0 + d, y, x_) = gks[pos * dh + d];
                            *gv.at_mut(ni, c0 + d, y, x_) = gvs[pos * dh + d];
                        }
                    }
                }
            }
        }

        let mut gx = self.wq.backward(x, &gq);
        gx.add_assign(&self.wk.backward(x, &gk));
        gx.add_assign(&self.wv.backward(x, &gv));
        gx
    }
}

impl<F: Real> ParamOwner<F> for AxisAttention<F> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.wq.visit_params(f);
        self.wk.visit_params(f);
        self.wv.visit_params(f);
        self.wo.visit_params(f);
    }
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

    /// Naive reference that materializes full per-sequence matrices with no
    /// scratch reuse or streaming.
    fn reference_axis_attention(
        att: &AxisAttention<f64>,
        x: &Tensor<f64>,
        axis: Axis,
        heads: usize,
    ) -> Tensor<f64> {
        let q = att.wq.forward(x);
        let k = att.wk.forward(x);
        let v = att.wv.forward(x);
        let (n, c, h, w) = q.shape();
        let dh = c / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = q.zeros_like();
        let (len, other) = match axis {
            Axis::Height => (h, w),
            Axis::Width => (w, h),
        };
        let yx = |pos: usize, m: usize| match axis {
            Axis::Height => (pos, m),
            Axis::Width => (m, pos),
        };
        for ni in 0..n {
            for m in 0..other {
                for head in 0..heads {
                    for i in 0..len {
                        let (yi, xi) = yx(i, m);
                        // softmax over j of scale * <q_i, k_j>
                        let mut weights = alloc::vec![0.0f64; len];
                        for j in 0..len {
                            let (yj, xj) = yx(j, m);
                            let mut dot = 0.0;
                            for d in 0..dh {
                                dot += q.at(ni, head * dh + d, yi, xi)
                                    * k.at(ni, head * dh + d, yj, xj);
                            }
                            weights[j] = dot * scale;
                        }
                        let mx = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let mut z = 0.0;
                        for wv in weights.iter_mut() {
                            *wv = (*wv - mx).exp();
                            z += *wv;
                        }
                        for d in 0..dh {
                            let mut acc = 0.0;
                            for j in 0..len {
                                let (yj, xj) = yx(j, m);
                                acc += weights[j] / z * v.at(ni, head * dh + d, yj, xj);
                            }
                            *out.at_mut(ni, head * dh + d, yi, xi) = acc;
                        }
                    }
                }
            }
        }
        att.wo.forward(&out)
    }

    #[test]
    fn forward_matches_naive_reference_both_axes() {
        for (axis, seed) in [(Axis::Height, 1u64), (Axis::Width, 2u64)] {
            let att = AxisAttention::<f64>::new("a", 8, 2, axis, false, seed);
            let x = random((2, 8, 5, 4), 50 + seed);
            let got = att.forward(&x);
            let want = reference_axis_attention(&att, &x, axis, 2);
            let diff: f64 = got
                .data()
                .iter()
                .zip(want.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-12, "{axis:?}: {diff}");
        }
    }

    #[test]
    fn train_forward_equals_inference_forward() {
        let att = AxisAttention::<f64>::new("a", 6, 3, Axis::Width, false, 9);
        let x = random((1, 6, 4, 7), 3);
        let (y_train, _) = att.forward_train(&x);
        let y = att.forward(&x);
        assert_eq!(y_train, y);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut att = AxisAttention::<f64>::new("a", 4, 2, Axis::Height, false, 13);
        let x = random((1, 4, 3, 4), 21);
        let gy = random((1, 4, 3, 4), 22);
        let loss = |att: &AxisAttention<f64>, x: &Tensor<f64>| -> f64 {
            att.forward(x)
                .data()
                .iter()
                .zip(gy.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let (_, cache) = att.forward_train(&x);
        let gx = att.backward(&x, &cache, &gy);
        let eps = 1e-6;
        for i in 0..x.numel() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let fd = (loss(&att, &xp) - loss(&att, &xm)) / (2.0 * eps);
            let rel = (fd - gx.data()[i]).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-5, "gx[{i}]: fd {fd} vs {}", gx.data()[i]);
        }
        // Spot-check parameter gradients on each projection.
        let mut param_checks: alloc::vec::Vec<(f64, f64)> = alloc::vec::Vec::new();
        {
            let (_, cache) = att.forward_train(&x);
            crate::nn::zero_grads(&mut att);
            att.backward(&x, &cache, &gy);
        }
        for which in 0..4 {
            let idx = 5;
            let (orig, analytic) = {
                let p = match which {
                    0 => &att.wq.w,
                    1 => &att.wk.w,
                    2 => &att.wv.w,
                    _ => &att.wo.w,
                };
                (p.v.data()[idx], p.g.data()[idx])
            };
            let set = |att: &mut AxisAttention<f64>, v: f64| {
                let p = match which {
                    0 => &mut att.wq.w,
                    1 => &mut att.wk.w,
                    2 => &mut att.wv.w,
                    _ => &mut att.wo.w,
                };
                p.v.data_mut()[idx] = v;
            };
            set(&mut att, orig + eps);
            let lp = loss(&att, &x);
            set(&mut att, orig - eps);
            let lm = loss(&att, &x);
            set(&mut att, orig);
            param_checks.push(((lp - lm) / (2.0 * eps), analytic));
        }
        for (i, (fd, analytic)) in param_checks.iter().enumerate() {
            assert!(
                (fd - analytic).abs() < 1e-6,
                "projection {i}: fd {fd} vs analytic {analytic}"
            );
        }
    }
}
