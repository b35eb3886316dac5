//! Turning 8-bit pixels into continuous values in `[0, 1)`.
//!
//! Likelihoods of dequantized data are densities on `[0, 1)^D`; adding
//! `D·ln 256` converts them to a bound on the discrete likelihood of the
//! original pixels, see [`bits_per_dim`].

use super::{gaussian_log_prob, zero_log_det, Builder, CondFlowStep, ConditionalBijector};
use crate::error::{Error, Result};
use crate::params::Cx;
use crate::tensor::{normal_sample, Element, Rng, Shape, Tensor, Var};

/// Largest uniform offset used, so `(x + u)/256` stays strictly below
/// `(x + 1)/256` after rounding to `f32`.
const MAX_OFFSET: f64 = 1.0 - 1.0 / 32768.0;

/// `D·ln 256`, the discretization term per image.
pub fn dequantization_nats(dims: usize) -> f64 {
    dims as f64 * 256f64.ln()
}

/// Bits per dimension of the discrete data given the (variational) continuous
/// log-likelihood in nats of one image with `dims` dimensions.
pub fn bits_per_dim(log_likelihood: f64, dims: usize) -> f64 {
    -(log_likelihood - dequantization_nats(dims)) / (dims as f64 * std::f64::consts::LN_2)
}

fn check_pixels<T: Element>(x: &Tensor<T>) -> Result<()> {
    for v in x.data() {
        let f = v.f64();
        if !(0.0..=255.0).contains(&f) || f.fract() != 0.0 {
            return Err(Error::Domain {
                op: "dequantize",
                reason: "pixels must be integers in 0..=255",
            });
        }
    }
    Ok(())
}

/// `(x + u)/256` with `u ~ U[0, 1)`. Returns the dequantized tensor and the
/// per-image correction `D·ln 256` in nats.
pub fn uniform_dequantize<T: Element>(x: &Tensor<T>, rng: &mut Rng) -> Result<(Tensor<T>, f64)> {
    let noise = Tensor::from_fn(x.shape(), |_| T::of(rng.uniform()));
    uniform_dequantize_with(x, &noise)
}

/// [`uniform_dequantize`] with explicit offsets in `[0, 1)`; zero offsets
/// give exactly `x/256`.
pub fn uniform_dequantize_with<T: Element>(
    x: &Tensor<T>,
    offsets: &Tensor<T>,
) -> Result<(Tensor<T>, f64)> {
    check_pixels(x)?;
    if x.shape() != offsets.shape() {
        return Err(Error::ShapeMismatch {
            op: "uniform_dequantize",
            lhs: x.shape(),
            rhs: offsets.shape(),
        });
    }
    let data = x
        .data()
        .iter()
        .zip(offsets.data())
        .map(|(&p, &u)| T::of((p.f64() + u.f64().clamp(0.0, MAX_OFFSET)) / 256.0))
        .collect();
    let [_, c, h, w] = x.shape();
    Ok((
        Tensor::new(x.shape(), data)?,
        dequantization_nats(c * h * w),
    ))
}

/// Inverse of dequantization: `floor(256·x)` clamped to `0..=255`.
pub fn quantize<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::of((v.f64() * 256.0).floor().clamp(0.0, 255.0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DequantKind {
    Uniform,
    Variational,
}

/// Learned noise distribution `q(u | x)`: Gaussian noise pushed through
/// conditional flow steps (on the squeezed image) and a sigmoid.
#[derive(Clone, Debug)]
pub struct VariationalDequantizer {
    steps: Vec<CondFlowStep>,
}

impl VariationalDequantizer {
    pub fn new<T: Element>(
        b: &mut Builder<T>,
        name: &str,
        channels: usize,
        n_steps: usize,
        hidden: usize,
    ) -> Result<Self> {
        let c = 4 * channels;
        let steps = (0..n_steps)
            .map(|k| CondFlowStep::new(b, &format!("{name}.step{k}"), c, c, hidden))
            .collect::<Result<_>>()?;
        Ok(Self { steps })
    }

    /// Maps noise `eps` to offsets `u ∈ (0,1)` given pixels `x`; returns
    /// `(u, log q(u | x))` with the log-density per batch element.
    pub fn offsets<T: Element>(
        &self,
        cx: &Cx<T>,
        x: &Tensor<T>,
        eps: &Tensor<T>,
    ) -> Result<(Var, Var)> {
        let g = cx.g;
        let batch = x.batch();
        let cond = g.constant(x.map(|v| T::of(v.f64() / 127.5 - 1.0)).squeeze2x2()?);
        let e = g.constant(eps.clone());
        let mut h = g.squeeze(e)?;
        let mut log_det = zero_log_det(cx, batch);
        for step in &self.steps {
            let out = step.forward(cx, h, cond)?;
            h = out.y;
            log_det = g.add(log_det, out.log_det)?;
        }
        let h = g.unsqueeze(h)?;
        let u = g.sigmoid(h)?;
        // log σ'(h) = −softplus(h) − softplus(−h)
        let log_sig_grad = g.neg(g.add(g.softplus(h)?, g.softplus(g.neg(h)?)?)?)?;
        let log_det = g.add(log_det, g.sum_per_batch(log_sig_grad)?)?;
        let log_q = g.sub(gaussian_log_prob(cx, e)?, log_det)?;
        if g.value(u)
            .data()
            .iter()
            .any(|v| !(*v > T::zero() && *v < T::one()))
        {
            return Err(Error::Domain {
                op: "variational dequantize",
                reason: "offset outside (0, 1)",
            });
        }
        Ok((u, log_q))
    }
}

/// The dequantization applied at the input of a multi-scale flow.
#[derive(Clone, Debug)]
pub enum Dequantizer {
    Uniform,
    Variational(VariationalDequantizer),
}

impl Dequantizer {
    /// Dequantizes integer pixels `x`. Returns the continuous image and
    /// `log q(u | x)` per batch element (zero for uniform noise).
    pub fn dequantize<T: Element>(
        &self,
        cx: &Cx<T>,
        x: &Tensor<T>,
        rng: &mut Rng,
    ) -> Result<(Var, Var)> {
        let noise = self.noise(x.shape(), rng)?;
        self.dequantize_with(cx, x, &noise)
    }

    /// Noise of the kind [`Dequantizer::dequantize_with`] expects.
    pub fn noise<T: Element>(&self, shape: Shape, rng: &mut Rng) -> Result<Tensor<T>> {
        match self {
            Dequantizer::Uniform => Ok(Tensor::from_fn(shape, |_| T::of(rng.uniform()))),
            Dequantizer::Variational(_) => normal_sample(rng, shape, 1.0),
        }
    }

    /// [`Dequantizer::dequantize`] with explicit noise: offsets in `[0,1)`
    /// for uniform, standard-normal draws for variational.
    pub fn dequantize_with<T: Element>(
        &self,
        cx: &Cx<T>,
        x: &Tensor<T>,
        noise: &Tensor<T>,
    ) -> Result<(Var, Var)> {
        let g = cx.g;
        match self {
            Dequantizer::Uniform => {
                let (v, _) = uniform_dequantize_with(x, noise)?;
                Ok((g.constant(v), zero_log_det(cx, x.batch())))
            }
            Dequantizer::Variational(flow) => {
                check_pixels(x)?;
                let (u, log_q) = flow.offsets(cx, x, noise)?;
                let xv = g.constant(x.clone());
                let out = g.scale(g.add(xv, u)?, 1.0 / 256.0)?;
                let over = g
                    .value(out)
                    .data()
                    .iter()
                    .zip(x.data())
                    .any(|(o, p)| o.f64() >= (p.f64() + 1.0) / 256.0);
                if over {
                    return Err(Error::Domain {
                        op: "variational dequantize",
                        reason: "offset rounds up to the next pixel value",
                    });
                }
                Ok((out, log_q))
            }
        }
    }
}
