use super::{
    ActNorm, AffineCoupling, AffineInjector, Bijector, Builder, CondAffineCoupling,
    ConditionalBijector, InvConv1x1, LayerOutput,
};
use crate::error::Result;
use crate::params::Cx;
use crate::tensor::{Element, Var};

/// ActNorm → invertible 1×1 convolution → affine coupling.
#[derive(Clone, Debug)]
pub struct FlowStep {
    pub actnorm: ActNorm,
    pub conv: InvConv1x1,
    pub coupling: AffineCoupling,
}

impl FlowStep {
    pub fn new<T: Element>(
        b: &mut Builder<T>,
        name: &str,
        channels: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(Self {
            actnorm: ActNorm::new(b, &format!("{name}.actnorm"), channels),
            conv: InvConv1x1::new(b, &format!("{name}.invconv"), channels),
            coupling: AffineCoupling::new(b, &format!("{name}.coupling"), channels, hidden)?,
        })
    }
}

impl Bijector for FlowStep {
    fn forward<T: Element>(&self, cx: &Cx<T>, x: Var) -> Result<LayerOutput> {
        let a = self.actnorm.forward(cx, x)?;
        let c = self.conv.forward(cx, a.y)?;
        let k = self.coupling.forward(cx, c.y)?;
        let g = cx.g;
        Ok(LayerOutput {
            y: k.y,
            log_det: g.add(g.add(a.log_det, c.log_det)?, k.log_det)?,
        })
    }

    fn inverse<T: Element>(&self, cx: &Cx<T>, y: Var) -> Result<Var> {
        let c = self.coupling.inverse(cx, y)?;
        let a = self.conv.inverse(cx, c)?;
        self.actnorm.inverse(cx, a)
    }
}

/// ActNorm → invertible 1×1 convolution, used right after a squeeze.
#[derive(Clone, Debug)]
pub struct TransitionStep {
    pub actnorm: ActNorm,
    pub conv: InvConv1x1,
}

impl TransitionStep {
    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, channels: usize) -> Self {
        Self {
            actnorm: ActNorm::new(b, &format!("{name}.actnorm"), channels),
            conv: InvConv1x1::new(b, &format!("{name}.invconv"), channels),
        }
    }
}

impl Bijector for TransitionStep {
    fn forward<T: Element>(&self, cx: &Cx<T>, x: Var) -> Result<LayerOutput> {
        let a = self.actnorm.forward(cx, x)?;
        let c = self.conv.forward(cx, a.y)?;
        Ok(LayerOutput {
            y: c.y,
            log_det: cx.g.add(a.log_det, c.log_det)?,
        })
    }

    fn inverse<T: Element>(&self, cx: &Cx<T>, y: Var) -> Result<Var> {
        let a = self.conv.inverse(cx, y)?;
        self.actnorm.inverse(cx, a)
    }
}

/// ActNorm → 1×1 convolution → affine injector → conditional coupling.
#[derive(Clone, Debug)]
pub struct CondFlowStep {
    pub actnorm: ActNorm,
    pub conv: InvConv1x1,
    pub injector: AffineInjector,
    pub coupling: CondAffineCoupling,
}

impl CondFlowStep {
    pub fn new<T: Element>(
        b: &mut Builder<T>,
        name: &str,
        channels: usize,
        cond_channels: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(Self {
            actnorm: ActNorm::new(b, &format!("{name}.actnorm"), channels),
            conv: InvConv1x1::new(b, &format!("{name}.invconv"), channels),
            injector: AffineInjector::new(
                b,
                &format!("{name}.injector"),
                channels,
                cond_channels,
                hidden,
            ),
            coupling: CondAffineCoupling::new(
                b,
                &format!("{name}.coupling"),
                channels,
                cond_channels,
                hidden,
            )?,
        })
    }
}

impl ConditionalBijector for CondFlowStep {
    fn forward<T: Element>(&self, cx: &Cx<T>, x: Var, cond: Var) -> Result<LayerOutput> {
        let g = cx.g;
        let a = self.actnorm.forward(cx, x)?;
        let c = self.conv.forward(cx, a.y)?;
        let i = self.injector.forward(cx, c.y, cond)?;
        let k = self.coupling.forward(cx, i.y, cond)?;
        let ld = g.add(g.add(a.log_det, c.log_det)?, g.add(i.log_det, k.log_det)?)?;
        Ok(LayerOutput {
            y: k.y,
            log_det: ld,
        })
    }

    fn inverse<T: Element>(&self, cx: &Cx<T>, y: Var, cond: Var) -> Result<Var> {
        let k = self.coupling.inverse(cx, y, cond)?;
        let i = self.injector.inverse(cx, k, cond)?;
        let c = self.conv.inverse(cx, i)?;
        self.actnorm.inverse(cx, c)
    }
}
