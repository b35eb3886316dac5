//! Unconditional multi-scale flow: image ↔ latent pyramid.
//!
//! Each of the `n` scales runs squeeze → 2 transition steps → K flow steps,
//! then splits off the first half of its channels as a pyramid level (no
//! split after the last scale). Levels are indexed so that `levels[0]` is the
//! deepest, coarsest output and `levels[n−1]` the first split.

use crate::error::{Error, Result};
use crate::layers::{
    gaussian_log_prob, zero_log_det, Bijector, Builder, DequantKind, Dequantizer, FlowStep,
    TransitionStep, VariationalDequantizer,
};
use crate::params::{Cx, ParamStore};
use crate::tensor::{normal_sample, numel, Element, Graph, Rng, Shape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub channels: usize,
    pub size: usize,
    pub n_scales: usize,
    /// Flow steps per scale (excluding the two transition steps).
    pub steps: usize,
    pub hidden: usize,
    pub dequant: DequantKind,
    pub dequant_steps: usize,
    pub dequant_hidden: usize,
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason| {
            Err(Error::InvalidShape {
                op: "multi-scale flow",
                shape: [1, self.channels, self.size, self.size],
                reason,
            })
        };
        if self.n_scales == 0 || self.channels == 0 {
            return bad("need at least one scale and one channel");
        }
        if !self.size.is_power_of_two() || self.size < 1 << self.n_scales {
            return bad("side must be a power of two of at least 2^n");
        }
        Ok(())
    }

    pub fn image_shape(&self, batch: usize) -> Shape {
        [batch, self.channels, self.size, self.size]
    }

    /// Shapes of the pyramid levels, `[L_0, …, L_{n−1}]`.
    pub fn pyramid_shapes(&self, batch: usize) -> Vec<Shape> {
        pyramid_shapes(self.channels, self.size, self.n_scales, batch)
    }
}

/// Level `j` has `C·2^(n−j)` channels at side `H/2^(n−j)` for `j ≥ 1`; the
/// deepest level keeps the whole last-scale output, `C·2^(n+1)` channels.
pub fn pyramid_shapes(channels: usize, size: usize, n_scales: usize, batch: usize) -> Vec<Shape> {
    (0..n_scales)
        .map(|j| {
            let side = size >> (n_scales - j);
            let c = if j == 0 {
                channels << (n_scales + 1)
            } else {
                channels << (n_scales - j)
            };
            [batch, c, side, side]
        })
        .collect()
}

/// Pyramid of latents indexed by level, `levels[0]` coarsest.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPyramid<V> {
    pub levels: Vec<V>,
}

impl<V> LatentPyramid<V> {
    pub fn new(levels: Vec<V>) -> Self {
        Self { levels }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, j: usize) -> &V {
        &self.levels[j]
    }
}

impl<T: Element> LatentPyramid<Tensor<T>> {
    pub fn total_dims(&self) -> usize {
        self.levels.iter().map(|t| t.numel()).sum()
    }
}

#[derive(Clone, Debug)]
pub struct Encoded {
    pub pyramid: LatentPyramid<Var>,
    /// Log-det accumulated inside each scale, index `s` for scale `s + 1`.
    pub scale_log_dets: Vec<Var>,
    pub log_det: Var,
}

#[derive(Clone, Debug)]
struct Scale {
    transitions: Vec<TransitionStep>,
    steps: Vec<FlowStep>,
}

#[derive(Clone, Debug)]
pub struct MultiScaleFlow {
    cfg: FlowConfig,
    scales: Vec<Scale>,
    dequant: Dequantizer,
}

impl MultiScaleFlow {
    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, cfg: &FlowConfig) -> Result<Self> {
        cfg.validate()?;
        let mut scales = Vec::with_capacity(cfg.n_scales);
        let mut c = cfg.channels;
        for s in 0..cfg.n_scales {
            c *= 4;
            let transitions = (0..2)
                .map(|t| TransitionStep::new(b, &format!("{name}.scale{s}.transition{t}"), c))
                .collect();
            let steps = (0..cfg.steps)
                .map(|k| FlowStep::new(b, &format!("{name}.scale{s}.step{k}"), c, cfg.hidden))
                .collect::<Result<_>>()?;
            scales.push(Scale { transitions, steps });
            c /= 2;
        }
        let dequant = match cfg.dequant {
            DequantKind::Uniform => Dequantizer::Uniform,
            DequantKind::Variational => Dequantizer::Variational(VariationalDequantizer::new(
                b,
                &format!("{name}.dequant"),
                cfg.channels,
                cfg.dequant_steps,
                cfg.dequant_hidden,
            )?),
        };
        Ok(Self {
            cfg: cfg.clone(),
            scales,
            dequant,
        })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }

    pub fn dequantizer(&self) -> &Dequantizer {
        &self.dequant
    }

    fn check_image<T: Element>(&self, cx: &Cx<T>, x: Var) -> Result<()> {
        let s = cx.g.shape(x);
        let want = self.cfg.image_shape(s[0]);
        if s != want {
            return Err(Error::ShapeMismatch {
                op: "multi-scale encode",
                lhs: want,
                rhs: s,
            });
        }
        Ok(())
    }

    pub fn encode<T: Element>(&self, cx: &Cx<T>, x: Var) -> Result<Encoded> {
        self.check_image(cx, x)?;
        let g = cx.g;
        let n = self.cfg.n_scales;
        let batch = g.shape(x)[0];
        let mut levels: Vec<Option<Var>> = vec![None; n];
        let mut scale_log_dets = Vec::with_capacity(n);
        let mut h = x;
        for (s, scale) in self.scales.iter().enumerate() {
            h = g.squeeze(h)?;
            let mut ld = zero_log_det(cx, batch);
            for t in &scale.transitions {
                let out = t.forward(cx, h)?;
                h = out.y;
                ld = g.add(ld, out.log_det)?;
            }
            for step in &scale.steps {
                let out = step.forward(cx, h)?;
                h = out.y;
                ld = g.add(ld, out.log_det)?;
            }
            scale_log_dets.push(ld);
            // Scale s (0-based) emits level n−1−s.
            if s + 1 < n {
                let half = g.shape(h)[1] / 2;
                let (emit, rest) = g.split_channels(h, half)?;
                levels[n - 1 - s] = Some(emit);
                h = rest;
            } else {
                levels[0] = Some(h);
            }
        }
        let mut log_det = zero_log_det(cx, batch);
        for &ld in &scale_log_dets {
            log_det = g.add(log_det, ld)?;
        }
        Ok(Encoded {
            pyramid: LatentPyramid::new(
                levels
                    .into_iter()
                    .map(|v| v.expect("every level set"))
                    .collect(),
            ),
            scale_log_dets,
            log_det,
        })
    }

    fn check_pyramid<T: Element>(&self, cx: &Cx<T>, pyr: &LatentPyramid<Var>) -> Result<usize> {
        if pyr.len() != self.cfg.n_scales {
            return Err(Error::InvalidArgument(format!(
                "pyramid has {} levels, flow has {} scales",
                pyr.len(),
                self.cfg.n_scales
            )));
        }
        let batch = cx.g.shape(pyr.levels[0])[0];
        for (v, want) in pyr.levels.iter().zip(self.cfg.pyramid_shapes(batch)) {
            let got = cx.g.shape(*v);
            if got != want {
                return Err(Error::ShapeMismatch {
                    op: "multi-scale decode",
                    lhs: want,
                    rhs: got,
                });
            }
        }
        Ok(batch)
    }

    pub fn decode<T: Element>(&self, cx: &Cx<T>, pyr: &LatentPyramid<Var>) -> Result<Var> {
        self.check_pyramid(cx, pyr)?;
        let g = cx.g;
        let n = self.cfg.n_scales;
        let mut h = pyr.levels[0];
        for (s, scale) in self.scales.iter().enumerate().rev() {
            if s + 1 < n {
                h = g.concat_channels(pyr.levels[n - 1 - s], h)?;
            }
            for step in scale.steps.iter().rev() {
                h = step.inverse(cx, h)?;
            }
            for t in scale.transitions.iter().rev() {
                h = t.inverse(cx, h)?;
            }
            h = g.unsqueeze(h)?;
        }
        Ok(h)
    }

    /// `Σ_j log N(L_j) + log_det`, nats per batch element, for an image in
    /// model range.
    pub fn log_prob<T: Element>(&self, cx: &Cx<T>, x: Var) -> Result<Var> {
        let enc = self.encode(cx, x)?;
        self.log_prob_of(cx, &enc)
    }

    pub fn log_prob_of<T: Element>(&self, cx: &Cx<T>, enc: &Encoded) -> Result<Var> {
        let g = cx.g;
        let mut lp = enc.log_det;
        for &z in &enc.pyramid.levels {
            lp = g.add(lp, gaussian_log_prob(cx, z)?)?;
        }
        let v = g.value(lp);
        if !v.is_finite() {
            return Err(Error::NonFinite { op: "log_prob" });
        }
        Ok(lp)
    }

    /// Draws `batch` images from the model at temperature `τ`.
    pub fn sample<T: Element>(
        &self,
        store: &ParamStore<T>,
        rng: &mut Rng,
        temperature: f64,
        batch: usize,
    ) -> Result<Tensor<T>> {
        let g = Graph::no_grad();
        let cx = Cx::new(&g, store);
        let levels = self
            .cfg
            .pyramid_shapes(batch)
            .into_iter()
            .map(|s| normal_sample(rng, s, temperature).map(|t| g.constant(t)))
            .collect::<Result<_>>()?;
        let x = self.decode(&cx, &LatentPyramid::new(levels))?;
        Ok(g.value(x).as_ref().clone())
    }

    /// Total image dimensionality `C·H·W`.
    pub fn dims(&self) -> usize {
        numel(self.cfg.image_shape(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::InitMode;

    fn cfg(c: usize, size: usize, n: usize) -> FlowConfig {
        FlowConfig {
            channels: c,
            size,
            n_scales: n,
            steps: 1,
            hidden: 4,
            dequant: DequantKind::Uniform,
            dequant_steps: 0,
            dequant_hidden: 0,
        }
    }

    #[test]
    fn documented_shapes() {
        let shapes = pyramid_shapes(3, 16, 3, 1);
        assert_eq!(shapes, vec![[1, 48, 2, 2], [1, 12, 4, 4], [1, 6, 8, 8]]);
        assert_eq!(shapes.iter().map(|s| numel(*s)).sum::<usize>(), 768);
    }

    #[test]
    fn rejects_too_small_side() {
        assert!(cfg(3, 4, 3).validate().is_err());
        assert!(cfg(3, 12, 2).validate().is_err());
        assert!(cfg(3, 8, 3).validate().is_ok());
    }

    #[test]
    fn encode_produces_configured_shapes() {
        let c = cfg(1, 8, 2);
        let mut store = ParamStore::<f32>::new();
        let mut rng = Rng::new(0);
        let flow = MultiScaleFlow::new(
            &mut Builder::new(&mut store, &mut rng, InitMode::Standard),
            "t",
            &c,
        )
        .unwrap();
        let g = Graph::no_grad();
        let cx = Cx::new(&g, &store);
        let x = g.constant(Tensor::from_fn([2, 1, 8, 8], |_| rng.uniform() as f32));
        let enc = flow.encode(&cx, x).unwrap();
        let got: Vec<Shape> = enc.pyramid.levels.iter().map(|v| g.shape(*v)).collect();
        assert_eq!(got, c.pyramid_shapes(2));
        assert_eq!(enc.scale_log_dets.len(), 2);
    }

    #[test]
    fn wrong_image_shape_rejected() {
        let c = cfg(1, 8, 2);
        let mut store = ParamStore::<f32>::new();
        let mut rng = Rng::new(0);
        let flow = MultiScaleFlow::new(
            &mut Builder::new(&mut store, &mut rng, InitMode::Standard),
            "t",
            &c,
        )
        .unwrap();
        let g = Graph::no_grad();
        let cx = Cx::new(&g, &store);
        let x = g.constant(Tensor::zeros([1, 3, 8, 8]));
        assert!(flow.encode(&cx, x).is_err());
    }
}
