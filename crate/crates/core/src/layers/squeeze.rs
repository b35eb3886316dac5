use super::{zero_log_det, Bijector, LayerOutput};
use crate::error::Result;
use crate::params::Cx;
use crate::tensor::{Element, Var};

/// Space-to-depth: `(B, C, H, W) → (B, 4C, H/2, W/2)`, volume preserving.
#[derive(Clone, Copy, Debug, Default)]
pub struct Squeeze;

impl Bijector for Squeeze {
    fn forward<T: Element>(&self, cx: &Cx<T>, x: Var) -> Result<LayerOutput> {
        let batch = cx.g.shape(x)[0];
        Ok(LayerOutput {
            y: cx.g.squeeze(x)?,
            log_det: zero_log_det(cx, batch),
        })
    }

    fn inverse<T: Element>(&self, cx: &Cx<T>, y: Var) -> Result<Var> {
        cx.g.unsqueeze(y)
    }
}
