use super::{per_batch, Bijector, Builder, LayerOutput};
use crate::error::{Error, Result};
use crate::params::{Cx, ParamId};
use crate::tensor::{Element, Tensor, Var};

/// Per-channel affine map `y = scale ⊙ x + bias`.
///
/// In a data-init pass the first batch seen sets `scale` and `bias` so that
/// every output channel has zero mean and unit variance over that batch.
#[derive(Clone, Debug)]
pub struct ActNorm {
    pub scale: ParamId,
    pub bias: ParamId,
    channels: usize,
}

impl ActNorm {
    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, channels: usize) -> Self {
        let scale = b.param(
            format!("{name}.scale"),
            Tensor::full([1, channels, 1, 1], T::one()),
        );
        let bias = b.param(format!("{name}.bias"), Tensor::zeros([1, channels, 1, 1]));
        Self {
            scale,
            bias,
            channels,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn params<T: Element>(&self, cx: &Cx<T>, x: Var) -> Result<(Var, Var)> {
        if cx.is_data_init() && !cx.initialized_here(self.scale) {
            let (scale, bias) = data_init_values(&cx.g.value(x))?;
            return Ok((cx.set_init(self.scale, scale), cx.set_init(self.bias, bias)));
        }
        let s = cx.p(self.scale);
        if cx.g.value(s).data().iter().any(|v| *v == T::zero()) {
            return Err(Error::Domain {
                op: "actnorm",
                reason: "scale has a zero entry",
            });
        }
        Ok((s, cx.p(self.bias)))
    }
}

fn data_init_values<T: Element>(x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let [b, c, h, w] = x.shape();
    let n = (b * h * w) as f64;
    let mut scale = Vec::with_capacity(c);
    let mut bias = Vec::with_capacity(c);
    for ch in 0..c {
        let (mut s, mut s2) = (0.0, 0.0);
        for bi in 0..b {
            let off = x.offset([bi, ch, 0, 0]);
            for v in &x.data()[off..off + h * w] {
                let v = v.f64();
                s += v;
                s2 += v * v;
            }
        }
        let mean = s / n;
        let var = (s2 / n - mean * mean).max(0.0);
        let inv = 1.0 / (var.sqrt() + 1e-6);
        scale.push(T::of(inv));
        bias.push(T::of(-mean * inv));
    }
    Ok((
        Tensor::new([1, c, 1, 1], scale)?,
        Tensor::new([1, c, 1, 1], bias)?,
    ))
}

impl Bijector for ActNorm {
    fn forward<T: Element>(&self, cx: &Cx<T>, x: Var) -> Result<LayerOutput> {
        let g = cx.g;
        let [batch, _, h, w] = g.shape(x);
        let (s, b) = self.params(cx, x)?;
        let y = g.add(g.mul(x, s)?, b)?;
        let ld = g.scale(g.sum_all(g.log_abs(s)?)?, (h * w) as f64)?;
        Ok(LayerOutput {
            y,
            log_det: per_batch(cx, ld, batch)?,
        })
    }

    fn inverse<T: Element>(&self, cx: &Cx<T>, y: Var) -> Result<Var> {
        let g = cx.g;
        let (s, b) = self.params(cx, y)?;
        g.div(g.sub(y, b)?, s)
    }
}
