//! A two-dimensional flow built from the image layers, used to check that
//! learned densities integrate to one.
//!
//! Points are stored as `(B, 2, 1, 1)` tensors so the same actnorm, 1×1
//! convolution and coupling code paths run as in the image models.

use crate::error::Result;
use crate::layers::{gaussian_log_prob, Bijector, Builder, FlowStep, InitMode};
use crate::par;
use crate::params::{Cx, ParamStore};
use crate::tensor::{Element, Graph, Rng, Tensor, Var};
use crate::train::{clip_gradients, Adam};

#[derive(Clone, Debug)]
pub struct ToyFlow {
    steps: Vec<FlowStep>,
}

impl ToyFlow {
    pub fn build<T: Element>(
        n_steps: usize,
        hidden: usize,
        seed: u64,
    ) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);
        let mut b = Builder::new(&mut store, &mut rng, InitMode::Standard);
        let steps = (0..n_steps)
            .map(|k| FlowStep::new(&mut b, &format!("toy.step{k}"), 2, hidden))
            .collect::<Result<_>>()?;
        Ok((Self { steps }, store))
    }

    /// `log p(x)` per point for `x` of shape `(B, 2, 1, 1)`.
    pub fn log_prob<T: Element>(&self, cx: &Cx<T>, x: Var) -> Result<Var> {
        let g = cx.g;
        let mut h = x;
        let mut log_det = None;
        for step in &self.steps {
            let out = step.forward(cx, h)?;
            h = out.y;
            log_det = Some(match log_det {
                Some(acc) => g.add(acc, out.log_det)?,
                None => out.log_det,
            });
        }
        let lp = gaussian_log_prob(cx, h)?;
        match log_det {
            Some(ld) => g.add(lp, ld),
            None => Ok(lp),
        }
    }

    pub fn sample<T: Element>(
        &self,
        store: &ParamStore<T>,
        rng: &mut Rng,
        n: usize,
    ) -> Result<Tensor<T>> {
        let g = Graph::no_grad();
        let cx = Cx::new(&g, store);
        let mut h = g.constant(Tensor::from_fn([n, 2, 1, 1], |_| T::of(rng.normal())));
        for step in self.steps.iter().rev() {
            h = step.inverse(&cx, h)?;
        }
        Ok(g.value(h).as_ref().clone())
    }

    /// Density `exp(log p)` at the given points.
    pub fn density<T: Element>(
        &self,
        store: &ParamStore<T>,
        points: &[[f64; 2]],
    ) -> Result<Vec<f64>> {
        let g = Graph::no_grad();
        let cx = Cx::new(&g, store);
        let x = g.constant(Tensor::from_fn([points.len(), 2, 1, 1], |[b, c, _, _]| {
            T::of(points[b][c])
        }));
        let lp = self.log_prob(&cx, x)?;
        Ok(g.value(lp).data().iter().map(|v| v.f64().exp()).collect())
    }

    /// Midpoint-rule integral of the density over `[-half, half]²` with
    /// `res × res` cells.
    pub fn integrate<T: Element>(
        &self,
        store: &ParamStore<T>,
        half: f64,
        res: usize,
    ) -> Result<f64> {
        let h = 2.0 * half / res as f64;
        let rows = par::map_range(res, |r| {
            let y = -half + (r as f64 + 0.5) * h;
            let pts: Vec<[f64; 2]> = (0..res)
                .map(|c| [-half + (c as f64 + 0.5) * h, y])
                .collect();
            self.density(store, &pts).map(|d| d.iter().sum::<f64>())
        });
        let mut total = 0.0;
        for r in rows {
            total += r?;
        }
        Ok(total * h * h)
    }

    /// Maximum-likelihood fit with Adam; returns the mean negative
    /// log-likelihood of each step.
    pub fn fit(
        &self,
        store: &mut ParamStore<f32>,
        data: &mut impl FnMut(&mut Rng, usize) -> Vec<[f64; 2]>,
        iters: usize,
        batch: usize,
        lr: f64,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let mut rng = Rng::new(seed);
        let mut adam = Adam::new(store);
        let mut losses = Vec::with_capacity(iters);
        for _ in 0..iters {
            let pts = data(&mut rng, batch);
            let x = Tensor::from_fn([batch, 2, 1, 1], |[b, c, _, _]| pts[b][c] as f32);
            let g = Graph::new();
            let cx = Cx::new(&g, store);
            let lp = self.log_prob(&cx, g.constant(x))?;
            let loss = g.scale(g.sum_all(g.neg(lp)?)?, 1.0 / batch as f64)?;
            losses.push(g.value(loss).sum_f64());
            let grads = g.backward(loss)?;
            let mut pg = cx.param_grads(&grads);
            clip_gradients(&mut pg, 10.0)?;
            drop(cx);
            adam.step(store, &pg, lr)?;
        }
        Ok(losses)
    }
}

/// Draws from an equal-weight mixture of four isotropic Gaussians centred at
/// `(±1.5, ±1.5)` with standard deviation 0.5.
pub fn four_gaussians(rng: &mut Rng, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| {
            let k = rng.below(4);
            let cx = if k & 1 == 0 { -1.5 } else { 1.5 };
            let cy = if k & 2 == 0 { -1.5 } else { 1.5 };
            [cx + 0.5 * rng.normal(), cy + 0.5 * rng.normal()]
        })
        .collect()
}

/// Density of [`four_gaussians`].
pub fn four_gaussians_density(p: [f64; 2]) -> f64 {
    let norm = 1.0 / (2.0 * std::f64::consts::PI * 0.25);
    let mut d = 0.0;
    for cx in [-1.5, 1.5] {
        for cy in [-1.5, 1.5] {
            let r2 = (p[0] - cx).powi(2) + (p[1] - cy).powi(2);
            d += 0.25 * norm * (-r2 / 0.5).exp();
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn untrained_flow_is_close_to_standard_normal_mass() {
        let (flow, store) = ToyFlow::build::<f64>(2, 8, 1).unwrap();
        // Coupling nets start at zero, so only the orthogonal convolutions act.
        let mass = flow.integrate(&store, 4.0, 100).unwrap();
        assert!((mass - 0.99987).abs() < 1e-3, "{mass}");
    }

    #[test]
    fn mixture_density_integrates_to_one() {
        let res = 400;
        let h = 8.0 / res as f64;
        let mut s = 0.0;
        for r in 0..res {
            for c in 0..res {
                s += four_gaussians_density([
                    -4.0 + (c as f64 + 0.5) * h,
                    -4.0 + (r as f64 + 0.5) * h,
                ]);
            }
        }
        assert!((s * h * h - 1.0).abs() < 1e-4);
    }

    #[test]
    fn sample_then_density_is_finite() {
        let (flow, store) = ToyFlow::build::<f32>(2, 8, 2).unwrap();
        let x = flow.sample(&store, &mut Rng::new(0), 5).unwrap();
        let pts: Vec<[f64; 2]> = (0..5)
            .map(|b| [x.at([b, 0, 0, 0]) as f64, x.at([b, 1, 0, 0]) as f64])
            .collect();
        assert!(flow
            .density(&store, &pts)
            .unwrap()
            .iter()
            .all(|d| d.is_finite() && *d > 0.0));
    }
}
