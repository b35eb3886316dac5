//! Dense 4-D tensors, reverse-mode differentiation and seeded sampling.

mod conv;
mod graph;
pub mod oracle;
mod rng;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

pub use conv::{conv2d_forward, ConvGeometry};
pub(crate) use graph::plu_factors;
pub use graph::{Gradients, Graph, Var};
pub use rng::{normal_sample, Rng, RngState};

use crate::error::{Error, Result};

/// `(batch, channels, height, width)`.
pub type Shape = [usize; 4];

/// Floating point element type. Parameters and activations are `f32` in
/// production; the `f64` instantiation backs the numerical oracles.
pub trait Element:
    num_traits::Float + Default + Debug + Display + Send + Sync + Sum + AddAssign + MulAssign + 'static
{
    const BYTES: usize;

    fn of(v: f64) -> Self;
    fn f64(self) -> f64;

    /// Raw strided `c = a·b + beta·c` with `a` m×k, `b` k×n, `c` m×n.
    ///
    /// # Safety
    /// Every strided index must lie inside the pointed-to buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        a_strides: (isize, isize),
        b: *const Self,
        b_strides: (isize, isize),
        beta: Self,
        c: *mut Self,
        c_cols: usize,
    );
}

impl Element for f32 {
    const BYTES: usize = 4;

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        a_strides: (isize, isize),
        b: *const Self,
        b_strides: (isize, isize),
        beta: Self,
        c: *mut Self,
        c_cols: usize,
    ) {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a,
            a_strides.0,
            a_strides.1,
            b,
            b_strides.0,
            b_strides.1,
            beta,
            c,
            c_cols as isize,
            1,
        )
    }
}

impl Element for f64 {
    const BYTES: usize = 8;

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        a_strides: (isize, isize),
        b: *const Self,
        b_strides: (isize, isize),
        beta: Self,
        c: *mut Self,
        c_cols: usize,
    ) {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a,
            a_strides.0,
            a_strides.1,
            b,
            b_strides.0,
            b_strides.1,
            beta,
            c,
            c_cols as isize,
            1,
        )
    }
}

pub fn numel(shape: Shape) -> usize {
    shape.iter().product()
}

/// Row-major `(B, C, H, W)` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::DataLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full([1, 1, 1, 1], value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let [b, c, h, w] = shape;
        let mut data = Vec::with_capacity(numel(shape));
        for bi in 0..b {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([bi, ci, y, x]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    /// Builds a tensor from `f64` values, rounding to `T`.
    pub fn from_f64(shape: Shape, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, [b, c, y, x]: [usize; 4]) -> usize {
        let [_, cs, hs, ws] = self.shape;
        ((b * cs + c) * hs + y) * ws + x
    }

    #[inline]
    pub fn at(&self, idx: [usize; 4]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.f64()).collect()
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(Error::InvalidShape {
                op: "reshape",
                shape,
                reason: "element count changes",
            });
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    /// Sum of all elements, accumulated in `f64`.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.f64()).sum()
    }

    /// Largest absolute elementwise difference (the ∞-norm of `self - other`).
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.f64() - b.f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.f64().abs()).fold(0.0, f64::max)
    }

    /// Elementwise binary op with broadcasting: every dimension of each
    /// operand must equal the output dimension or be 1.
    pub fn zip_broadcast(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Self> {
        let out = broadcast_shape(op, self.shape, other.shape)?;
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Ok(Self { shape: out, data });
        }
        let sa = broadcast_strides(self.shape);
        let sb = broadcast_strides(other.shape);
        let mut data = Vec::with_capacity(numel(out));
        for b in 0..out[0] {
            for c in 0..out[1] {
                for y in 0..out[2] {
                    for x in 0..out[3] {
                        let ia = b * sa[0] + c * sa[1] + y * sa[2] + x * sa[3];
                        let ib = b * sb[0] + c * sb[1] + y * sb[2] + x * sb[3];
                        data.push(f(self.data[ia], other.data[ib]));
                    }
                }
            }
        }
        Ok(Self { shape: out, data })
    }

    /// Sums `self` down to `target`, reducing over every dimension where
    /// `target` is 1. Inverse of broadcasting; accumulates in `f64`.
    pub fn reduce_to(&self, target: Shape) -> Self {
        if self.shape == target {
            return self.clone();
        }
        let mut acc = vec![0.0f64; numel(target)];
        let st = broadcast_strides(target);
        let [b, c, h, w] = self.shape;
        let mut i = 0;
        for bi in 0..b {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        acc[bi * st[0] + ci * st[1] + y * st[2] + x * st[3]] += self.data[i].f64();
                        i += 1;
                    }
                }
            }
        }
        Self {
            shape: target,
            data: acc.into_iter().map(T::of).collect(),
        }
    }

    /// Splits channels into `[0, at)` and `[at, C)`.
    pub fn split_channels(&self, at: usize) -> Result<(Self, Self)> {
        let c = self.shape[1];
        if at == 0 || at >= c {
            return Err(Error::InvalidShape {
                op: "channel_split",
                shape: self.shape,
                reason: "split index must satisfy 0 < at < C",
            });
        }
        Ok((self.channel_slice(0, at), self.channel_slice(at, c - at)))
    }

    pub fn channel_slice(&self, start: usize, len: usize) -> Self {
        let [b, c, h, w] = self.shape;
        assert!(start + len <= c, "channel slice out of range");
        let plane = h * w;
        let mut data = Vec::with_capacity(b * len * plane);
        for bi in 0..b {
            let base = (bi * c + start) * plane;
            data.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Self {
            shape: [b, len, h, w],
            data,
        }
    }

    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        let [ba, ca, ha, wa] = a.shape;
        let [bb, cb, hb, wb] = b.shape;
        if ba != bb || ha != hb || wa != wb {
            return Err(Error::ShapeMismatch {
                op: "channel_concat",
                lhs: a.shape,
                rhs: b.shape,
            });
        }
        let plane = ha * wa;
        let mut data = Vec::with_capacity(a.numel() + b.numel());
        for bi in 0..ba {
            data.extend_from_slice(&a.data[bi * ca * plane..(bi + 1) * ca * plane]);
            data.extend_from_slice(&b.data[bi * cb * plane..(bi + 1) * cb * plane]);
        }
        Ok(Self {
            shape: [ba, ca + cb, ha, wa],
            data,
        })
    }

    /// 2×2 space-to-channel rearrangement. Output channel `4c + k` holds the
    /// sub-pixel `k` of input channel `c`, with `k` running over top-left,
    /// top-right, bottom-left, bottom-right.
    pub fn squeeze2x2(&self) -> Result<Self> {
        let [b, c, h, w] = self.shape;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidShape {
                op: "squeeze",
                shape: self.shape,
                reason: "height and width must be even",
            });
        }
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Self::zeros([b, 4 * c, ho, wo]);
        for bi in 0..b {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let k = (y % 2) * 2 + x % 2;
                        let dst = out.offset([bi, 4 * ci + k, y / 2, x / 2]);
                        out.data[dst] = self.data[self.offset([bi, ci, y, x])];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Exact inverse of [`Tensor::squeeze2x2`].
    pub fn unsqueeze2x2(&self) -> Result<Self> {
        let [b, c4, ho, wo] = self.shape;
        if c4 % 4 != 0 {
            return Err(Error::InvalidShape {
                op: "unsqueeze",
                shape: self.shape,
                reason: "channels must be a multiple of 4",
            });
        }
        let c = c4 / 4;
        let mut out = Self::zeros([b, c, 2 * ho, 2 * wo]);
        for bi in 0..b {
            for ci in 0..c {
                for y in 0..2 * ho {
                    for x in 0..2 * wo {
                        let k = (y % 2) * 2 + x % 2;
                        let dst = out.offset([bi, ci, y, x]);
                        out.data[dst] = self.data[self.offset([bi, 4 * ci + k, y / 2, x / 2])];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Copies batch item `i` into a batch-of-one tensor.
    pub fn batch_item(&self, i: usize) -> Self {
        let [_, c, h, w] = self.shape;
        let n = c * h * w;
        Self {
            shape: [1, c, h, w],
            data: self.data[i * n..(i + 1) * n].to_vec(),
        }
    }

    /// Concatenates tensors along the batch dimension.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items.first().ok_or_else(|| {
            Error::InvalidArgument("cannot stack an empty list of tensors".into())
        })?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::new();
        let mut b = 0;
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    lhs: first.shape,
                    rhs: t.shape,
                });
            }
            b += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Self {
            shape: [b, c, h, w],
            data,
        })
    }
}

pub(crate) fn broadcast_shape(op: &'static str, a: Shape, b: Shape) -> Result<Shape> {
    let mut out = [0; 4];
    for d in 0..4 {
        out[d] = if a[d] == b[d] {
            a[d]
        } else if a[d] == 1 {
            b[d]
        } else if b[d] == 1 {
            a[d]
        } else {
            return Err(Error::ShapeMismatch { op, lhs: a, rhs: b });
        };
    }
    Ok(out)
}

/// Row-major strides with zero stride on size-1 dimensions.
fn broadcast_strides(shape: Shape) -> [usize; 4] {
    let [_, c, h, w] = shape;
    let full = [c * h * w, h * w, w, 1];
    let mut s = [0; 4];
    for d in 0..4 {
        s[d] = if shape[d] == 1 { 0 } else { full[d] };
    }
    s
}
