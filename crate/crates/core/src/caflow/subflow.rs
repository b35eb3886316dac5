use crate::error::{Error, Result};
use crate::layers::{
    zero_log_det, Bijector, Builder, CondFlowStep, ConditionalBijector, TransitionStep,
};
use crate::params::Cx;
use crate::tensor::{Element, Var};

/// One conditional sub-flow `f_j^i`: optional squeeze → 2 transition steps →
/// M conditional flow steps → optional split. Levels `j ≥ 1` squeeze and
/// split; the deepest level does neither.
#[derive(Clone, Debug)]
pub struct CondSubFlow {
    resample: bool,
    transitions: Vec<TransitionStep>,
    steps: Vec<CondFlowStep>,
}

/// Forward result: the emitted latent, the half passed on to the next
/// sub-flow (when splitting) and the log-determinant.
#[derive(Clone, Copy, Debug)]
pub struct SubFlowOutput {
    pub emitted: Var,
    pub carry: Option<Var>,
    pub log_det: Var,
}

impl CondSubFlow {
    pub fn new<T: Element>(
        b: &mut Builder<T>,
        name: &str,
        in_channels: usize,
        cond_channels: usize,
        resample: bool,
        n_steps: usize,
        hidden: usize,
    ) -> Result<Self> {
        let c = if resample {
            4 * in_channels
        } else {
            in_channels
        };
        let transitions = (0..2)
            .map(|t| TransitionStep::new(b, &format!("{name}.transition{t}"), c))
            .collect();
        let steps = (0..n_steps)
            .map(|k| CondFlowStep::new(b, &format!("{name}.step{k}"), c, cond_channels, hidden))
            .collect::<Result<_>>()?;
        Ok(Self {
            resample,
            transitions,
            steps,
        })
    }

    pub fn resamples(&self) -> bool {
        self.resample
    }

    /// `cond` must already match the working resolution (squeezed once for
    /// resampling sub-flows).
    pub fn forward<T: Element>(&self, cx: &Cx<T>, x: Var, cond: Var) -> Result<SubFlowOutput> {
        let g = cx.g;
        let mut h = if self.resample { g.squeeze(x)? } else { x };
        let mut ld = zero_log_det(cx, g.shape(x)[0]);
        for t in &self.transitions {
            let out = t.forward(cx, h)?;
            h = out.y;
            ld = g.add(ld, out.log_det)?;
        }
        for s in &self.steps {
            let out = s.forward(cx, h, cond)?;
            h = out.y;
            ld = g.add(ld, out.log_det)?;
        }
        if self.resample {
            let half = g.shape(h)[1] / 2;
            let (emitted, carry) = g.split_channels(h, half)?;
            Ok(SubFlowOutput {
                emitted,
                carry: Some(carry),
                log_det: ld,
            })
        } else {
            Ok(SubFlowOutput {
                emitted: h,
                carry: None,
                log_det: ld,
            })
        }
    }

    pub fn inverse<T: Element>(
        &self,
        cx: &Cx<T>,
        emitted: Var,
        carry: Option<Var>,
        cond: Var,
    ) -> Result<Var> {
        let g = cx.g;
        let mut h = match (self.resample, carry) {
            (true, Some(c)) => g.concat_channels(emitted, c)?,
            (true, None) => {
                return Err(Error::InvalidArgument(
                    "splitting sub-flow needs the carried half".into(),
                ));
            }
            (false, _) => emitted,
        };
        for s in self.steps.iter().rev() {
            h = s.inverse(cx, h, cond)?;
        }
        for t in self.transitions.iter().rev() {
            h = t.inverse(cx, h)?;
        }
        if self.resample {
            h = g.unsqueeze(h)?;
        }
        Ok(h)
    }
}
