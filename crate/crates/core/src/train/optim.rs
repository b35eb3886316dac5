use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Element, Tensor};

/// Adam with bias correction. Moments are kept for every store entry;
/// buffers simply never receive gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub steps: u64,
}

impl<T: Element> Adam<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || {
            params
                .entries()
                .iter()
                .map(|e| Tensor::zeros(e.value.shape()))
                .collect()
        };
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros(),
            v: zeros(),
            steps: 0,
        }
    }

    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &[Option<Tensor<T>>],
        lr: f64,
    ) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} tensors, got {} gradients for {} parameters",
                self.m.len(),
                grads.len(),
                params.len()
            )));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (k, entry) in params.entries_mut().iter_mut().enumerate() {
            if !entry.trainable {
                continue;
            }
            let Some(g) = &grads[k] else { continue };
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (((p, &gi), mi), vi) in entry
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m)
                .zip(v)
            {
                let gf = gi.f64();
                let mf = b1 * mi.f64() + (1.0 - b1) * gf;
                let vf = b2 * vi.f64() + (1.0 - b2) * gf * gf;
                *mi = T::of(mf);
                *vi = T::of(vf);
                let update = lr * (mf / c1) / ((vf / c2).sqrt() + eps);
                *p = T::of(p.f64() - update);
            }
        }
        Ok(())
    }
}
