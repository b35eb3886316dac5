//! Stride-1 2-D convolution with zero "same" padding, plus its adjoints.

use super::{Element, Tensor};
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeometry {
    pub fn check<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Self> {
        let [batch, c_in, height, width] = x.shape();
        let [c_out, wc_in, kh, kw] = w.shape();
        if wc_in != c_in {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: x.shape(),
                rhs: w.shape(),
            });
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidShape {
                op: "conv2d",
                shape: w.shape(),
                reason: "kernel sides must be odd",
            });
        }
        if let Some(b) = b {
            if b.shape() != [1, c_out, 1, 1] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: [1, c_out, 1, 1],
                    rhs: b.shape(),
                });
            }
        }
        Ok(Self {
            batch,
            c_in,
            c_out,
            height,
            width,
            kh,
            kw,
        })
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Valid output index range `[lo, hi)` along an axis of length `n` for
    /// tap offset `d`, i.e. positions `p` with `0 <= p + d < n`.
    #[inline]
    fn span(n: usize, d: isize) -> (usize, usize) {
        let lo = (-d).max(0) as usize;
        let hi = (n as isize - d).clamp(0, n as isize) as usize;
        (lo.min(hi), hi)
    }
}

/// Batch items per partial sum in the kernel gradient. Fixed so the
/// summation order does not depend on the thread count.
const WEIGHT_GRAD_GROUP: usize = 4;

/// Row-major `c = op(a)·op(b) + beta·c` with `op(a)` m×k and `op(b)` k×n;
/// a set flag means the operand is stored transposed.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    beta: T,
    c: &mut [T],
) {
    assert!(
        a.len() >= m * k && b.len() >= k * n && c.len() >= m * n,
        "gemm operand too small"
    );
    if m == 0 || n == 0 {
        return;
    }
    let sa = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let sb = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the strides address exactly the m×k, k×n and m×n blocks whose
    // sizes were checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            sa,
            b.as_ptr(),
            sb,
            beta,
            c.as_mut_ptr(),
            n,
        )
    }
}

impl ConvGeometry {
    fn taps(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }

    /// Visits every in-bounds (tap row, output offset, input offset) triple
    /// of one batch item as contiguous runs.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (ph, pw) = ((self.kh / 2) as isize, (self.kw / 2) as isize);
        let plane = self.plane();
        for ci in 0..self.c_in {
            for ky in 0..self.kh {
                let dy = ky as isize - ph;
                let (y0, y1) = Self::span(self.height, dy);
                for kx in 0..self.kw {
                    let dx = kx as isize - pw;
                    let (x0, x1) = Self::span(self.width, dx);
                    if x0 >= x1 {
                        continue;
                    }
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let src =
                            ci * plane + ((sy * self.width) as isize + x0 as isize + dx) as usize;
                        f(row, y * self.width + x0, src, x1 - x0);
                    }
                }
            }
        }
    }

    /// Unfolds one batch item `(c_in, H, W)` into a `(taps, H·W)` matrix.
    fn im2col<T: Element>(&self, src: &[T], cols: &mut [T]) {
        let plane = self.plane();
        cols.fill(T::zero());
        self.for_each_run(|row, dst, s, len| {
            let d = row * plane + dst;
            cols[d..d + len].copy_from_slice(&src[s..s + len]);
        });
    }

    /// Adjoint of [`Self::im2col`]: folds a `(taps, H·W)` matrix back,
    /// accumulating overlapping taps.
    fn col2im<T: Element>(&self, cols: &[T], dst: &mut [T]) {
        let plane = self.plane();
        dst.fill(T::zero());
        self.for_each_run(|row, c, d, len| {
            let c = row * plane + c;
            for (o, &v) in dst[d..d + len].iter_mut().zip(&cols[c..c + len]) {
                *o += v;
            }
        });
    }
}

pub fn conv2d_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::check(x, w, b)?;
    let (plane, taps) = (g.plane(), g.taps());
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![T::zero(); g.batch * g.c_out * plane];
    par::for_each_chunk(&mut out, (g.c_out * plane).max(1), |bi, dst| {
        let src = &xd[bi * g.c_in * plane..(bi + 1) * g.c_in * plane];
        let beta = match b {
            Some(b) => {
                for (co, row) in dst.chunks_mut(plane.max(1)).enumerate() {
                    row.fill(b.data()[co]);
                }
                T::one()
            }
            None => T::zero(),
        };
        if g.pointwise() {
            gemm(g.c_out, taps, plane, wd, false, src, false, beta, dst);
        } else {
            let mut cols = vec![T::zero(); taps * plane];
            g.im2col(src, &mut cols);
            gemm(g.c_out, taps, plane, wd, false, &cols, false, beta, dst);
        }
    });
    Tensor::new([g.batch, g.c_out, g.height, g.width], out)
}

/// Gradient of the convolution with respect to its input.
pub(crate) fn conv2d_grad_input<T: Element>(
    g: ConvGeometry,
    w: &Tensor<T>,
    grad: &Tensor<T>,
) -> Tensor<T> {
    let (plane, taps) = (g.plane(), g.taps());
    let wd = w.data();
    let gd = grad.data();
    let mut out = vec![T::zero(); g.batch * g.c_in * plane];
    par::for_each_chunk(&mut out, (g.c_in * plane).max(1), |bi, dst| {
        let src = &gd[bi * g.c_out * plane..(bi + 1) * g.c_out * plane];
        if g.pointwise() {
            gemm(taps, g.c_out, plane, wd, true, src, false, T::zero(), dst);
        } else {
            let mut cols = vec![T::zero(); taps * plane];
            gemm(
                taps,
                g.c_out,
                plane,
                wd,
                true,
                src,
                false,
                T::zero(),
                &mut cols,
            );
            g.col2im(&cols, dst);
        }
    });
    Tensor::new([g.batch, g.c_in, g.height, g.width], out).expect("conv grad shape")
}

/// Gradient with respect to the kernels.
pub(crate) fn conv2d_grad_weight<T: Element>(
    g: ConvGeometry,
    x: &Tensor<T>,
    grad: &Tensor<T>,
) -> Tensor<T> {
    let (plane, taps) = (g.plane(), g.taps());
    let xd = x.data();
    let gd = grad.data();
    let size = g.c_out * taps;
    let groups = g.batch.div_ceil(WEIGHT_GRAD_GROUP);
    let partials = par::map_range(groups, |k| {
        let mut acc = vec![T::zero(); size];
        let mut cols = vec![T::zero(); if g.pointwise() { 0 } else { taps * plane }];
        for bi in k * WEIGHT_GRAD_GROUP..((k + 1) * WEIGHT_GRAD_GROUP).min(g.batch) {
            let src = &xd[bi * g.c_in * plane..(bi + 1) * g.c_in * plane];
            let gb = &gd[bi * g.c_out * plane..(bi + 1) * g.c_out * plane];
            let beta = if bi == k * WEIGHT_GRAD_GROUP {
                T::zero()
            } else {
                T::one()
            };
            if g.pointwise() {
                gemm(g.c_out, plane, taps, gb, false, src, true, beta, &mut acc);
            } else {
                g.im2col(src, &mut cols);
                gemm(g.c_out, plane, taps, gb, false, &cols, true, beta, &mut acc);
            }
        }
        acc
    });
    let mut out = vec![T::zero(); size];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    Tensor::new([g.c_out, g.c_in, g.kh, g.kw], out).expect("conv weight grad shape")
}

pub(crate) fn conv2d_grad_bias<T: Element>(g: ConvGeometry, grad: &Tensor<T>) -> Tensor<T> {
    grad.reduce_to([1, g.c_out, 1, 1])
}
