use crate::caflow::CaflowModel;
use crate::error::{Error, Result};
use crate::layers::dequantization_nats;
use crate::params::Cx;
use crate::tensor::{Element, Rng, Tensor, Var};

/// One evaluation of the training objective.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    /// `mean_b [nll(w|y) + λ·nll(y)] / (D ln 2)`, differentiable.
    pub loss: Var,
    /// Batch-mean conditional bits per dimension.
    pub cond_bpd: f64,
    /// Batch-mean bits per dimension of `y` under `R`.
    pub y_bpd: f64,
}

/// Negative of `log p(w|y) + λ log p(y)` in bits per dimension, for integer
/// pixel batches `w` and `y`, with dequantization noise drawn from `rng`.
pub fn loss<T: Element>(
    cx: &Cx<T>,
    model: &CaflowModel,
    w: &Tensor<T>,
    y: &Tensor<T>,
    lambda: f64,
    rng: &mut Rng,
) -> Result<LossTerms> {
    let wn = model.t.dequantizer().noise(w.shape(), rng)?;
    let yn = model.r.dequantizer().noise(y.shape(), rng)?;
    loss_with_noise(cx, model, w, y, &wn, &yn, lambda)
}

pub fn loss_with_noise<T: Element>(
    cx: &Cx<T>,
    model: &CaflowModel,
    w: &Tensor<T>,
    y: &Tensor<T>,
    w_noise: &Tensor<T>,
    y_noise: &Tensor<T>,
    lambda: f64,
) -> Result<LossTerms> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    let g = cx.g;
    let (wd, log_q_w) = model.t.dequantizer().dequantize_with(cx, w, w_noise)?;
    let (yd, log_q_y) = model.r.dequantizer().dequantize_with(cx, y, y_noise)?;
    let terms = model.forward_joint(cx, wd, yd)?;
    let dims = model.config().dims();
    let disc = dequantization_nats(dims);
    let batch = w.batch();
    let norm = 1.0 / (dims as f64 * std::f64::consts::LN_2);

    // nll = −(log p − log q) + D ln 256, per batch element.
    let nll_w = g.add_scalar(g.neg(g.sub(terms.cond_log_prob, log_q_w)?)?, disc)?;
    let nll_y = g.add_scalar(g.neg(g.sub(terms.y_log_prob, log_q_y)?)?, disc)?;
    let total = if lambda > 0.0 {
        g.add(nll_w, g.scale(nll_y, lambda)?)?
    } else {
        nll_w
    };
    let loss = g.scale(g.sum_all(total)?, norm / batch as f64)?;
    if !g.value(loss).is_finite() {
        return Err(Error::NonFinite { op: "loss" });
    }
    let mean = |v: Var| g.value(v).sum_f64() / batch as f64 * norm;
    Ok(LossTerms {
        loss,
        cond_bpd: mean(nll_w),
        y_bpd: mean(nll_y),
    })
}
