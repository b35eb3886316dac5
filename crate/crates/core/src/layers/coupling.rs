use super::{check_spatial, Bijector, Builder, ConditionalBijector, LayerOutput};
use crate::error::{Error, Result};
use crate::params::{Cx, ParamId};
use crate::tensor::{Element, Tensor, Var};

/// Log-scales are `SCALE_BOUND · tanh(raw)`, so every coupling scale lies in
/// `[e^-2, e^2]`.
pub const SCALE_BOUND: f64 = 2.0;

/// `conv3×3 → ReLU → conv1×1 → ReLU → conv3×3`. The last convolution starts
/// at zero so a freshly built coupling is the identity.
#[derive(Clone, Debug)]
pub struct CouplingNet {
    w: [ParamId; 3],
    b: [ParamId; 3],
    c_in: usize,
    c_out: usize,
}

impl CouplingNet {
    pub fn new<T: Element>(
        bld: &mut Builder<T>,
        name: &str,
        c_in: usize,
        hidden: usize,
        c_out: usize,
    ) -> Self {
        let conv = |bld: &mut Builder<T>, i: usize, co: usize, ci: usize, k: usize, zero: bool| {
            let std = (2.0 / (ci * k * k) as f64).sqrt();
            let w = if zero {
                Tensor::zeros([co, ci, k, k])
            } else {
                bld.normal([co, ci, k, k], std)
            };
            (
                bld.param(format!("{name}.conv{i}.weight"), w),
                bld.param(format!("{name}.conv{i}.bias"), Tensor::zeros([1, co, 1, 1])),
            )
        };
        let (w0, b0) = conv(bld, 0, hidden, c_in, 3, false);
        let (w1, b1) = conv(bld, 1, hidden, hidden, 1, false);
        let (w2, b2) = conv(bld, 2, c_out, hidden, 3, true);
        Self {
            w: [w0, w1, w2],
            b: [b0, b1, b2],
            c_in,
            c_out,
        }
    }

    pub fn forward<T: Element>(&self, cx: &Cx<T>, x: Var) -> Result<Var> {
        let g = cx.g;
        if g.shape(x)[1] != self.c_in {
            return Err(Error::ShapeMismatch {
                op: "coupling net",
                lhs: [g.shape(x)[0], self.c_in, g.shape(x)[2], g.shape(x)[3]],
                rhs: g.shape(x),
            });
        }
        let h = g.relu(g.conv2d(x, cx.p(self.w[0]), Some(cx.p(self.b[0])))?)?;
        let h = g.relu(g.conv2d(h, cx.p(self.w[1]), Some(cx.p(self.b[1])))?)?;
        g.conv2d(h, cx.p(self.w[2]), Some(cx.p(self.b[2])))
    }

    pub fn out_channels(&self) -> usize {
        self.c_out
    }
}

/// Splits the net output into bounded log-scale and bias halves.
fn scale_bias<T: Element>(cx: &Cx<T>, h: Var) -> Result<(Var, Var)> {
    let g = cx.g;
    let half = g.shape(h)[1] / 2;
    let (raw, bias) = g.split_channels(h, half)?;
    let log_scale = g.scale(g.tanh(raw)?, SCALE_BOUND)?;
    Ok((log_scale, bias))
}

fn affine_forward<T: Element>(cx: &Cx<T>, x: Var, log_scale: Var, bias: Var) -> Result<(Var, Var)> {
    let g = cx.g;
    let y = g.add(g.mul(x, g.exp(log_scale)?)?, bias)?;
    Ok((y, g.sum_per_batch(log_scale)?))
}

fn affine_inverse<T: Element>(cx: &Cx<T>, y: Var, log_scale: Var, bias: Var) -> Result<Var> {
    let g = cx.g;
    g.mul(g.sub(y, bias)?, g.exp(g.neg(log_scale)?)?)
}

fn check_even(op: &'static str, channels: usize) -> Result<()> {
    if channels < 2 || !channels.is_multiple_of(2) {
        return Err(Error::InvalidShape {
            op,
            shape: [1, channels, 1, 1],
            reason: "coupling needs an even channel count of at least 2",
        });
    }
    Ok(())
}

/// Affine coupling: the first channel half is scaled and shifted by a
/// function of the second half, which passes through unchanged.
#[derive(Clone, Debug)]
pub struct AffineCoupling {
    net: CouplingNet,
    channels: usize,
}

impl AffineCoupling {
    pub fn new<T: Element>(
        b: &mut Builder<T>,
        name: &str,
        channels: usize,
        hidden: usize,
    ) -> Result<Self> {
        check_even("affine coupling", channels)?;
        let half = channels / 2;
        Ok(Self {
            net: CouplingNet::new(b, &format!("{name}.net"), half, hidden, channels),
            channels,
        })
    }
}

impl Bijector for AffineCoupling {
    fn forward<T: Element>(&self, cx: &Cx<T>, x: Var) -> Result<LayerOutput> {
        let g = cx.g;
        let (x1, x2) = g.split_channels(x, self.channels / 2)?;
        let (s, t) = scale_bias(cx, self.net.forward(cx, x2)?)?;
        let (y1, log_det) = affine_forward(cx, x1, s, t)?;
        Ok(LayerOutput {
            y: g.concat_channels(y1, x2)?,
            log_det,
        })
    }

    fn inverse<T: Element>(&self, cx: &Cx<T>, y: Var) -> Result<Var> {
        let g = cx.g;
        let (y1, y2) = g.split_channels(y, self.channels / 2)?;
        let (s, t) = scale_bias(cx, self.net.forward(cx, y2)?)?;
        g.concat_channels(affine_inverse(cx, y1, s, t)?, y2)
    }
}

/// Affine coupling whose net also sees a conditioning tensor with the same
/// spatial size.
#[derive(Clone, Debug)]
pub struct CondAffineCoupling {
    net: CouplingNet,
    channels: usize,
}

impl CondAffineCoupling {
    pub fn new<T: Element>(
        b: &mut Builder<T>,
        name: &str,
        channels: usize,
        cond_channels: usize,
        hidden: usize,
    ) -> Result<Self> {
        check_even("conditional coupling", channels)?;
        let half = channels / 2;
        Ok(Self {
            net: CouplingNet::new(
                b,
                &format!("{name}.net"),
                half + cond_channels,
                hidden,
                channels,
            ),
            channels,
        })
    }
}

impl ConditionalBijector for CondAffineCoupling {
    fn forward<T: Element>(&self, cx: &Cx<T>, x: Var, cond: Var) -> Result<LayerOutput> {
        check_spatial(cx, "conditional coupling", x, cond)?;
        let g = cx.g;
        let (x1, x2) = g.split_channels(x, self.channels / 2)?;
        let (s, t) = scale_bias(cx, self.net.forward(cx, g.concat_channels(x2, cond)?)?)?;
        let (y1, log_det) = affine_forward(cx, x1, s, t)?;
        Ok(LayerOutput {
            y: g.concat_channels(y1, x2)?,
            log_det,
        })
    }

    fn inverse<T: Element>(&self, cx: &Cx<T>, y: Var, cond: Var) -> Result<Var> {
        check_spatial(cx, "conditional coupling", y, cond)?;
        let g = cx.g;
        let (y1, y2) = g.split_channels(y, self.channels / 2)?;
        let (s, t) = scale_bias(cx, self.net.forward(cx, g.concat_channels(y2, cond)?)?)?;
        g.concat_channels(affine_inverse(cx, y1, s, t)?, y2)
    }
}

/// Element-wise affine map of every channel with scale and bias computed from
/// the conditioning tensor alone.
#[derive(Clone, Debug)]
pub struct AffineInjector {
    net: CouplingNet,
}

impl AffineInjector {
    pub fn new<T: Element>(
        b: &mut Builder<T>,
        name: &str,
        channels: usize,
        cond_channels: usize,
        hidden: usize,
    ) -> Self {
        Self {
            net: CouplingNet::new(
                b,
                &format!("{name}.net"),
                cond_channels,
                hidden,
                2 * channels,
            ),
        }
    }
}

impl ConditionalBijector for AffineInjector {
    fn forward<T: Element>(&self, cx: &Cx<T>, x: Var, cond: Var) -> Result<LayerOutput> {
        check_spatial(cx, "affine injector", x, cond)?;
        let (s, t) = scale_bias(cx, self.net.forward(cx, cond)?)?;
        let (y, log_det) = affine_forward(cx, x, s, t)?;
        Ok(LayerOutput { y, log_det })
    }

    fn inverse<T: Element>(&self, cx: &Cx<T>, y: Var, cond: Var) -> Result<Var> {
        check_spatial(cx, "affine injector", y, cond)?;
        let (s, t) = scale_bias(cx, self.net.forward(cx, cond)?)?;
        affine_inverse(cx, y, s, t)
    }
}
