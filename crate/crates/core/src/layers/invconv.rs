use super::{per_batch, Bijector, Builder, InitMode, LayerOutput};
use crate::error::{Error, Result};
use crate::params::{Cx, ParamId};
use crate::tensor::plu_factors;
use crate::tensor::{Element, Tensor, Var};

/// Invertible 1×1 convolution with the kernel stored as `P·L·U`.
///
/// `lower` and `upper` hold the strict triangles, `log_s` the log-magnitudes
/// of `U`'s diagonal. The permutation and the diagonal signs are fixed
/// buffers, so the log-determinant is `H·W·Σ log_s` exactly.
#[derive(Clone, Debug)]
pub struct InvConv1x1 {
    pub lower: ParamId,
    pub upper: ParamId,
    pub log_s: ParamId,
    perm: ParamId,
    sign: ParamId,
    channels: usize,
}

impl InvConv1x1 {
    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, channels: usize) -> Self {
        let c = channels;
        let (perm, lower, upper, log_s, sign) = match b.mode {
            InitMode::Identity => (
                (0..c).collect::<Vec<_>>(),
                vec![0.0; c * c],
                vec![0.0; c * c],
                vec![0.0; c],
                vec![1.0; c],
            ),
            InitMode::Standard => {
                let q = random_orthogonal(b, c);
                lu_factors(&q, c)
            }
        };
        let t = |shape, v: &[f64]| Tensor::from_f64(shape, v).expect("factor length");
        let perm_f: Vec<f64> = perm.iter().map(|&p| p as f64).collect();
        Self {
            lower: b.param(format!("{name}.lower"), t([c, c, 1, 1], &lower)),
            upper: b.param(format!("{name}.upper"), t([c, c, 1, 1], &upper)),
            log_s: b.param(format!("{name}.log_s"), t([1, c, 1, 1], &log_s)),
            perm: b.buffer(format!("{name}.perm"), t([1, c, 1, 1], &perm_f)),
            sign: b.buffer(format!("{name}.sign"), t([1, c, 1, 1], &sign)),
            channels,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn perm<T: Element>(&self, cx: &Cx<T>) -> Vec<usize> {
        cx.value(self.perm)
            .data()
            .iter()
            .map(|v| v.f64() as usize)
            .collect()
    }

    /// Dense kernel matrix (row-major, `C×C`) from the current parameters.
    pub fn weight_matrix<T: Element>(&self, cx: &Cx<T>) -> Vec<f64> {
        let c = self.channels;
        let to64 = |id| cx.value(id).to_f64_vec();
        let (l, u) = plu_factors(
            &to64(self.lower),
            &to64(self.upper),
            &to64(self.log_s),
            &to64(self.sign),
        );
        let perm = self.perm(cx);
        let mut w = vec![0.0; c * c];
        for r in 0..c {
            let src = perm[r];
            for col in 0..c {
                w[r * c + col] = (0..c).map(|k| l[src * c + k] * u[k * c + col]).sum();
            }
        }
        w
    }

    /// `W⁻¹` via the triangular factors: solve `L·U·x = Pᵀe_j` per column.
    fn inverse_matrix<T: Element>(&self, cx: &Cx<T>) -> Vec<f64> {
        let c = self.channels;
        let to64 = |id| cx.value(id).to_f64_vec();
        let (l, u) = plu_factors(
            &to64(self.lower),
            &to64(self.upper),
            &to64(self.log_s),
            &to64(self.sign),
        );
        let perm = self.perm(cx);
        let mut inv = vec![0.0; c * c];
        for j in 0..c {
            // W x = e_j with W[r] = (LU)[perm[r]]  ⇔  (LU x)[perm[r]] = e_j[r].
            let mut rhs = vec![0.0; c];
            for r in 0..c {
                rhs[perm[r]] = if r == j { 1.0 } else { 0.0 };
            }
            for r in 0..c {
                let s: f64 = (0..r).map(|k| l[r * c + k] * rhs[k]).sum();
                rhs[r] -= s;
            }
            for r in (0..c).rev() {
                let s: f64 = (r + 1..c).map(|k| u[r * c + k] * rhs[k]).sum();
                rhs[r] = (rhs[r] - s) / u[r * c + r];
            }
            for r in 0..c {
                inv[r * c + j] = rhs[r];
            }
        }
        inv
    }
}

fn random_orthogonal<T: Element>(b: &mut Builder<T>, c: usize) -> Vec<f64> {
    loop {
        let mut q: Vec<f64> = (0..c * c).map(|_| b.rng.normal()).collect();
        let mut ok = true;
        // Modified Gram–Schmidt on rows.
        for r in 0..c {
            for p in 0..r {
                let dot: f64 = (0..c).map(|k| q[r * c + k] * q[p * c + k]).sum();
                for k in 0..c {
                    q[r * c + k] -= dot * q[p * c + k];
                }
            }
            let norm = (0..c).map(|k| q[r * c + k].powi(2)).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            for k in 0..c {
                q[r * c + k] /= norm;
            }
        }
        if ok {
            return q;
        }
    }
}

type Factors = (Vec<usize>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

/// Partial-pivot LU of `a`, returned as (perm, strict lower, strict upper,
/// log|diag U|, sign diag U) with row `r` of `a` equal to row `perm[r]` of `L·U`.
fn lu_factors(a: &[f64], c: usize) -> Factors {
    let mut m = a.to_vec();
    let mut piv: Vec<usize> = (0..c).collect();
    let mut l = vec![0.0; c * c];
    for col in 0..c {
        let p = (col..c)
            .max_by(|&i, &j| m[i * c + col].abs().total_cmp(&m[j * c + col].abs()))
            .expect("non-empty");
        if p != col {
            for k in 0..c {
                m.swap(col * c + k, p * c + k);
                l.swap(col * c + k, p * c + k);
            }
            piv.swap(col, p);
        }
        for r in col + 1..c {
            let f = m[r * c + col] / m[col * c + col];
            l[r * c + col] = f;
            for k in col..c {
                m[r * c + k] -= f * m[col * c + k];
            }
        }
    }
    // Row i of L·U is row piv[i] of a, so perm is the inverse of piv.
    let mut perm = vec![0; c];
    for (i, &p) in piv.iter().enumerate() {
        perm[p] = i;
    }
    let mut upper = vec![0.0; c * c];
    let mut log_s = vec![0.0; c];
    let mut sign = vec![0.0; c];
    for r in 0..c {
        for k in r + 1..c {
            upper[r * c + k] = m[r * c + k];
        }
        let d = m[r * c + r];
        log_s[r] = d.abs().ln();
        sign[r] = d.signum();
    }
    let lower = (0..c * c)
        .map(|i| if i % c < i / c { l[i] } else { 0.0 })
        .collect();
    (perm, lower, upper, log_s, sign)
}

impl Bijector for InvConv1x1 {
    fn forward<T: Element>(&self, cx: &Cx<T>, x: Var) -> Result<LayerOutput> {
        let g = cx.g;
        let [batch, c, h, w] = g.shape(x);
        if c != self.channels {
            return Err(Error::ShapeMismatch {
                op: "invconv1x1",
                lhs: [batch, self.channels, h, w],
                rhs: g.shape(x),
            });
        }
        let sign: Vec<T> = cx.value(self.sign).data().to_vec();
        let kernel = g.plu_weight(
            cx.p(self.lower),
            cx.p(self.upper),
            cx.p(self.log_s),
            &self.perm(cx),
            &sign,
        )?;
        let y = g.conv2d(x, kernel, None)?;
        let ld = g.scale(g.sum_all(cx.p(self.log_s))?, (h * w) as f64)?;
        Ok(LayerOutput {
            y,
            log_det: per_batch(cx, ld, batch)?,
        })
    }

    fn inverse<T: Element>(&self, cx: &Cx<T>, y: Var) -> Result<Var> {
        let c = self.channels;
        let inv = Tensor::from_f64([c, c, 1, 1], &self.inverse_matrix(cx))?;
        cx.g.conv2d(y, cx.g.constant(inv), None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use crate::tensor::{Graph, Rng};

    #[test]
    fn standard_init_is_orthogonal() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::new(4);
        let layer = InvConv1x1::new(
            &mut Builder::new(&mut store, &mut rng, InitMode::Standard),
            "c",
            5,
        );
        let g = Graph::no_grad();
        let cx = Cx::new(&g, &store);
        let w = layer.weight_matrix(&cx);
        for i in 0..5 {
            for j in 0..5 {
                let dot: f64 = (0..5).map(|k| w[i * 5 + k] * w[j * 5 + k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn graph_kernel_matches_dense_matrix() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::new(9);
        let layer = InvConv1x1::new(
            &mut Builder::new(&mut store, &mut rng, InitMode::Standard),
            "c",
            4,
        );
        store.perturb(&mut rng, 0.3);
        let g = Graph::no_grad();
        let cx = Cx::new(&g, &store);
        let sign: Vec<f64> = cx.value(layer.sign).data().to_vec();
        let k = g
            .plu_weight(
                cx.p(layer.lower),
                cx.p(layer.upper),
                cx.p(layer.log_s),
                &layer.perm(&cx),
                &sign,
            )
            .unwrap();
        let dense = Tensor::from_f64([4, 4, 1, 1], &layer.weight_matrix(&cx)).unwrap();
        assert!(g.value(k).max_abs_diff(&dense) < 1e-12);
    }

    #[test]
    fn inverse_matrix_inverts() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::new(2);
        let layer = InvConv1x1::new(
            &mut Builder::new(&mut store, &mut rng, InitMode::Standard),
            "c",
            6,
        );
        store.perturb(&mut rng, 0.5);
        let g = Graph::no_grad();
        let cx = Cx::new(&g, &store);
        let w = layer.weight_matrix(&cx);
        let inv = layer.inverse_matrix(&cx);
        for i in 0..6 {
            for j in 0..6 {
                let s: f64 = (0..6).map(|k| w[i * 6 + k] * inv[k * 6 + j]).sum();
                assert!((s - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
    }
}
