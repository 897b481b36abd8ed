//! Dense NCHW tensor.
//!
//! A deliberately plain container: shape fields plus a row-major `Vec`. All
//! layer kernels index it directly (`((n*C + c)*H + y)*W + x`), and hot inner
//! loops borrow contiguous rows via [`Tensor::row`]/[`Tensor::row_mut`] so
//! the compiler can vectorize them.
//!
//! Reductions accumulate in `f64` in fixed element order regardless of the
//! element type, which keeps `f32` runs deterministic and comparisons between
//! `f32` and `f64` instantiations meaningful.

use crate::error::{Error, Result};
use crate::scalar::Real;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor {
            n,
            c,
            h,
            w,
            data: vec![F::ZERO; n * c * h * w],
        }
    }

    pub fn filled(n: usize, c: usize, h: usize, w: usize, v: F) -> Self {
        Tensor {
            n,
            c,
            h,
            w,
            data: vec![v; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::dimension(format!(
                "data length {} does not match shape {}x{}x{}x{}",
                data.len(),
                n,
                c,
                h,
                w
            )));
        }
        Ok(Tensor { n, c, h, w, data })
    }

    /// Zero tensor with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(self.n, self.c, self.h, self.w)
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }
    #[inline]
    pub fn batch(&self) -> usize {
        self.n
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.c
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.h
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.w
    }
    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(n < self.n && c < self.c && y < self.h && x < self.w);
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> F {
        self.data[self.idx(n, c, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut F {
        let i = self.idx(n, c, y, x);
        &mut self.data[i]
    }

    /// Contiguous row `(n, c, y, 0..W)`.
    #[inline]
    pub fn row(&self, n: usize, c: usize, y: usize) -> &[F] {
        let start = self.idx(n, c, y, 0);
        &self.data[start..start + self.w]
    }

    #[inline]
    pub fn row_mut(&mut self, n: usize, c: usize, y: usize) -> &mut [F] {
        let start = self.idx(n, c, y, 0);
        let w = self.w;
        &mut self.data[start..start + w]
    }

    /// Contiguous H*W plane `(n, c)`.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[F] {
        let start = self.idx(n, c, 0, 0);
        &self.data[start..start + self.h * self.w]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [F] {
        let start = self.idx(n, c, 0, 0);
        let hw = self.h * self.w;
        &mut self.data[start..start + hw]
    }

    #[inline]
    pub fn data(&self) -> &[F] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn fill(&mut self, v: F) {
        for e in &mut self.data {
            *e = v;
        }
    }

    /// `self += other` (shapes must match).
    pub fn add_assign(&mut self, other: &Tensor<F>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
    }

    /// `self += s * other` (shapes must match).
    pub fn add_scaled(&mut self, other: &Tensor<F>, s: F) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * *b;
        }
    }

    pub fn scale(&mut self, s: F) {
        for e in &mut self.data {
            *e *= s;
        }
    }

    /// Elementwise `self - other` into a new tensor.
    pub fn sub(&self, other: &Tensor<F>) -> Tensor<F> {
        debug_assert_eq!(self.shape(), other.shape());
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a - b)
            .collect();
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data,
        }
    }

    /// Elementwise `self + other` into a new tensor.
    pub fn add(&self, other: &Tensor<F>) -> Tensor<F> {
        debug_assert_eq!(self.shape(), other.shape());
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a + b)
            .collect();
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data,
        }
    }

    /// Elementwise product into a new tensor.
    pub fn hadamard(&self, other: &Tensor<F>) -> Tensor<F> {
        debug_assert_eq!(self.shape(), other.shape());
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a * b)
            .collect();
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Tensor<F> {
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Sum of all elements, accumulated in f64 in element order.
    pub fn sum_f64(&self) -> f64 {
        let mut acc = 0.0;
        for &v in &self.data {
            acc += v.to_f64();
        }
        acc
    }

    pub fn mean_f64(&self) -> f64 {
        self.sum_f64() / self.numel() as f64
    }

    /// Sum of squares, accumulated in f64 in element order.
    pub fn sq_sum_f64(&self) -> f64 {
        let mut acc = 0.0;
        for &v in &self.data {
            let x = v.to_f64();
            acc += x * x;
        }
        acc
    }

    /// Largest absolute element, in f64.
    pub fn max_abs_f64(&self) -> f64 {
        let mut m = 0.0f64;
        for &v in &self.data {
            let a = v.to_f64().abs();
            if a > m {
                m = a;
            }
        }
        m
    }

    /// Concatenate along the channel axis; all inputs must share (n, h, w).
    pub fn concat_channels(parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::argument("concat_channels needs at least one tensor"))?;
        let (n, _, h, w) = first.shape();
        let mut c_total = 0;
        for p in parts {
            let (pn, pc, ph, pw) = p.shape();
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::dimension(format!(
                    "concat_channels operand {}x{}x{}x{} incompatible with {}x_x{}x{}",
                    pn, pc, ph, pw, n, h, w
                )));
            }
            c_total += pc;
        }
        let mut out = Tensor::zeros(n, c_total, h, w);
        for ni in 0..n {
            let mut c_off = 0;
            for p in parts {
                for ci in 0..p.c {
                    out.plane_mut(ni, c_off + ci).copy_from_slice(p.plane(ni, ci));
                }
                c_off += p.c;
            }
        }
        Ok(out)
    }

    /// Copy channels `[c0, c0+len)` into a new tensor.
    pub fn slice_channels(&self, c0: usize, len: usize) -> Tensor<F> {
        debug_assert!(c0 + len <= self.c);
        let mut out = Tensor::zeros(self.n, len, self.h, self.w);
        for ni in 0..self.n {
            for ci in 0..len {
                out.plane_mut(ni, ci).copy_from_slice(self.plane(ni, c0 + ci));
            }
        }
        out
    }

    /// Cast every element through f64 into a different scalar type.
    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| G::from_f64(v.to_f64())).collect(),
        }
    }

    /// Require an exact shape, naming the operand in the error.
    pub fn expect_shape(&self, shape: (usize, usize, usize, usize), what: &str) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::dimension(format!(
                "{what}: expected shape {:?}, got {:?}",
                shape,
                self.shape()
            )));
        }
        Ok(())
    }

    /// Require matching channel count, naming the operand in the error.
    pub fn expect_channels(&self, c: usize, what: &str) -> Result<()> {
        if self.c != c {
            return Err(Error::dimension(format!(
                "{what}: expected {} channels, got {}",
                c, self.c
            )));
        }
        Ok(())
    }
}
