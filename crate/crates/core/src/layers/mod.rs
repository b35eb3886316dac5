//! Invertible building blocks. Every layer maps `x ↦ y` and reports the
//! per-batch-element log-determinant of that map; `inverse` undoes it exactly.

mod actnorm;
mod coupling;
pub mod dequant;
mod invconv;
mod squeeze;
mod step;

pub use actnorm::ActNorm;
pub use coupling::{AffineCoupling, AffineInjector, CondAffineCoupling, CouplingNet, SCALE_BOUND};
pub use dequant::{
    bits_per_dim, dequantization_nats, quantize, uniform_dequantize, uniform_dequantize_with,
    DequantKind, Dequantizer, VariationalDequantizer,
};
pub use invconv::InvConv1x1;
pub use squeeze::Squeeze;
pub use step::{CondFlowStep, FlowStep, TransitionStep};

use crate::error::{Error, Result};
use crate::params::{Cx, ParamId, ParamStore};
use crate::tensor::{Element, Rng, Shape, Tensor, Var};

/// Output of a forward pass: the transformed tensor and `log|det ∂y/∂x|`
/// with shape `(B, 1, 1, 1)`.
#[derive(Clone, Copy, Debug)]
pub struct LayerOutput {
    pub y: Var,
    pub log_det: Var,
}

pub trait Bijector {
    fn forward<T: Element>(&self, cx: &Cx<T>, x: Var) -> Result<LayerOutput>;
    fn inverse<T: Element>(&self, cx: &Cx<T>, y: Var) -> Result<Var>;
}

/// Invertible in `x` for every fixed `cond`.
pub trait ConditionalBijector {
    fn forward<T: Element>(&self, cx: &Cx<T>, x: Var, cond: Var) -> Result<LayerOutput>;
    fn inverse<T: Element>(&self, cx: &Cx<T>, y: Var, cond: Var) -> Result<Var>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// Random orthogonal 1×1 convolutions and random hidden weights.
    Standard,
    /// Every layer starts as the identity map.
    Identity,
}

/// Registers parameters for a model under construction.
pub struct Builder<'a, T: Element> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut Rng,
    pub mode: InitMode,
}

impl<'a, T: Element> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut Rng, mode: InitMode) -> Self {
        Self { store, rng, mode }
    }

    pub fn param(&mut self, name: String, value: Tensor<T>) -> ParamId {
        self.store.add(name, value, true)
    }

    pub fn buffer(&mut self, name: String, value: Tensor<T>) -> ParamId {
        self.store.add(name, value, false)
    }

    pub fn normal(&mut self, shape: Shape, std: f64) -> Tensor<T> {
        let rng = &mut *self.rng;
        Tensor::from_fn(shape, |_| T::of(std * rng.normal()))
    }
}

/// Zero log-determinant of shape `(B, 1, 1, 1)`.
pub fn zero_log_det<T: Element>(cx: &Cx<T>, batch: usize) -> Var {
    cx.g.constant(Tensor::zeros([batch, 1, 1, 1]))
}

/// Broadcasts a `(1, 1, 1, 1)` log-determinant to every batch element.
pub fn per_batch<T: Element>(cx: &Cx<T>, scalar: Var, batch: usize) -> Result<Var> {
    let zeros = zero_log_det(cx, batch);
    cx.g.add(zeros, scalar)
}

pub(crate) fn check_spatial<T: Element>(
    cx: &Cx<T>,
    op: &'static str,
    x: Var,
    cond: Var,
) -> Result<()> {
    let (xs, cs) = (cx.g.shape(x), cx.g.shape(cond));
    if xs[0] != cs[0] || xs[2] != cs[2] || xs[3] != cs[3] {
        return Err(Error::ShapeMismatch {
            op,
            lhs: xs,
            rhs: cs,
        });
    }
    Ok(())
}

/// `Σ log N(z; 0, I)` per batch element.
pub fn gaussian_log_prob<T: Element>(cx: &Cx<T>, z: Var) -> Result<Var> {
    let g = cx.g;
    let [_, c, h, w] = g.shape(z);
    let d = (c * h * w) as f64;
    let sq = g.mul(z, z)?;
    let s = g.sum_per_batch(sq)?;
    let s = g.scale(s, -0.5)?;
    g.add_scalar(s, -0.5 * d * (2.0 * std::f64::consts::PI).ln())
}
