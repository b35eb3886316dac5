//! The conditional model: two multi-scale flows `R` (condition `y`) and `T`
//! (target `w`) plus conditional autoregressive flows `F_0 … F_{n−1}`.
//!
//! `R` and `T` encode `y` and `w` into pyramids `d` and `l`. `F_i` maps `l_i`
//! to Gaussian latents `z_i^i, …, z_0^i` through sub-flows `f_i^i, …, f_0^i`;
//! `f_i^i` is conditioned on `d_i` and `f_j^i` (`j < i`) on `(d_j, l_j)`, so
//! `log p(w|y) = log|det ∂T| + Σ_i log p(l_i | l_{<i}, d_{≤i})`.

mod subflow;

pub use subflow::{CondSubFlow, SubFlowOutput};

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::layers::{gaussian_log_prob, Builder, DequantKind, InitMode};
use crate::multiscale::{FlowConfig, LatentPyramid, MultiScaleFlow};
use crate::params::{Cx, ParamStore};
use crate::tensor::{normal_sample, Element, Graph, Rng, Shape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DependencyMode {
    /// `F_i` sees `d_i … d_0` and `l_{i−1} … l_0`.
    Caflow,
    /// `F_i` sees only `d_i`; the cross-scale inputs are zero tensors.
    DualGlow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightSharing {
    Off,
    /// `f_j^i` shares parameters across all `i > j`.
    Shared,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub size: usize,
    pub n_scales: usize,
    /// Flow steps per scale of `R`.
    pub r_steps: usize,
    /// Flow steps per scale of `T`.
    pub t_steps: usize,
    /// Conditional flow steps per sub-flow `f_j^i`.
    pub cond_steps: usize,
    pub hidden: usize,
    pub cond_hidden: usize,
    pub dependency: DependencyMode,
    pub sharing: WeightSharing,
    pub dequant: DequantKind,
    pub dequant_steps: usize,
}

impl ModelConfig {
    pub fn flow_config(&self, steps: usize) -> FlowConfig {
        FlowConfig {
            channels: self.channels,
            size: self.size,
            n_scales: self.n_scales,
            steps,
            hidden: self.hidden,
            dequant: self.dequant,
            dequant_steps: self.dequant_steps,
            dequant_hidden: self.cond_hidden,
        }
    }

    pub fn image_shape(&self, batch: usize) -> Shape {
        [batch, self.channels, self.size, self.size]
    }

    pub fn dims(&self) -> usize {
        self.channels * self.size * self.size
    }

    /// Channels of `l_j` (and `d_j`).
    fn level_channels(&self, j: usize) -> usize {
        crate::multiscale::pyramid_shapes(self.channels, self.size, self.n_scales, 1)[j][1]
    }

    fn level_side(&self, j: usize) -> usize {
        self.size >> (self.n_scales - j)
    }

    /// Input channels and side of `f_j^i`.
    fn subflow_input(&self, i: usize, j: usize) -> (usize, usize) {
        // Every sub-flow above j squeezes (×4 channels, ½ side) and passes on
        // half its channels.
        let steps_down = i - j;
        (
            self.level_channels(i) << steps_down,
            self.level_side(i) >> steps_down,
        )
    }

    fn cond_channels(&self, i: usize, j: usize) -> usize {
        let base = if j == i {
            self.level_channels(i)
        } else {
            2 * self.level_channels(j)
        };
        if j >= 1 {
            4 * base
        } else {
            base
        }
    }

    /// Shapes of `z_j^i` for `j = 0 ..= i`.
    pub fn z_shapes(&self, i: usize, batch: usize) -> Vec<Shape> {
        (0..=i)
            .map(|j| {
                let (c, s) = self.subflow_input(i, j);
                if j >= 1 {
                    [batch, 2 * c, s / 2, s / 2]
                } else {
                    [batch, c, s, s]
                }
            })
            .collect()
    }
}

/// Per-term breakdown of one joint evaluation, all `(B, 1, 1, 1)` in nats.
#[derive(Clone, Debug)]
pub struct JointTerms {
    /// `log p(w | y)` of the continuous target.
    pub cond_log_prob: Var,
    /// `log p(y)` under `R`.
    pub y_log_prob: Var,
    /// `log|det ∂T|`.
    pub t_log_det: Var,
    /// `Σ_j log N(z_j^i) + log|det ∂F_i|`, one per `i`.
    pub components: Vec<Var>,
    pub d: LatentPyramid<Var>,
    pub l: LatentPyramid<Var>,
    pub z: Vec<Vec<Var>>,
}

#[derive(Clone, Debug)]
pub struct ConditionalSample<T> {
    /// Continuous image in model range.
    pub image: Tensor<T>,
    pub l: Vec<Tensor<T>>,
    /// `z[i][j]` = sampled `z_j^i`.
    pub z: Vec<Vec<Tensor<T>>>,
}

#[derive(Clone, Debug)]
pub struct CaflowModel {
    cfg: ModelConfig,
    pub r: MultiScaleFlow,
    pub t: MultiScaleFlow,
    subflows: Vec<CondSubFlow>,
    /// `table[i][j]` indexes the sub-flow used as `f_j^i`.
    table: Vec<Vec<usize>>,
}

impl CaflowModel {
    pub fn new<T: Element>(b: &mut Builder<T>, cfg: &ModelConfig) -> Result<Self> {
        let r = MultiScaleFlow::new(b, "r", &cfg.flow_config(cfg.r_steps))?;
        let t = MultiScaleFlow::new(b, "t", &cfg.flow_config(cfg.t_steps))?;
        let mut subflows = Vec::new();
        let mut by_key: HashMap<String, usize> = HashMap::new();
        let mut table = Vec::with_capacity(cfg.n_scales);
        for i in 0..cfg.n_scales {
            let mut row = Vec::with_capacity(i + 1);
            for j in 0..=i {
                let key = match cfg.sharing {
                    WeightSharing::Shared if j < i => format!("f.shared.{j}"),
                    _ => format!("f.{i}.{j}"),
                };
                let idx = match by_key.get(&key) {
                    Some(&idx) => idx,
                    None => {
                        let (c, _) = cfg.subflow_input(i, j);
                        let sf = CondSubFlow::new(
                            b,
                            &key,
                            c,
                            cfg.cond_channels(i, j),
                            j >= 1,
                            cfg.cond_steps,
                            cfg.cond_hidden,
                        )?;
                        subflows.push(sf);
                        by_key.insert(key, subflows.len() - 1);
                        subflows.len() - 1
                    }
                };
                row.push(idx);
            }
            table.push(row);
        }
        Ok(Self {
            cfg: cfg.clone(),
            r,
            t,
            subflows,
            table,
        })
    }

    /// Builds a model and its parameters from a seed.
    pub fn build<T: Element>(
        cfg: &ModelConfig,
        seed: u64,
        mode: InitMode,
    ) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);
        let model = Self::new(&mut Builder::new(&mut store, &mut rng, mode), cfg)?;
        Ok((model, store))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Number of distinct conditional sub-flow parameter groups.
    pub fn subflow_groups(&self) -> usize {
        self.subflows.len()
    }

    pub fn subflow_index(&self, i: usize, j: usize) -> usize {
        self.table[i][j]
    }

    /// Conditioning inputs of `f_j^i` for `j = 0 ..= i`, already brought to
    /// each sub-flow's working resolution. `l` needs at least `i` levels.
    pub fn conditions<T: Element>(
        &self,
        cx: &Cx<T>,
        i: usize,
        d: &[Var],
        l: &[Var],
    ) -> Result<Vec<Var>> {
        let g = cx.g;
        if d.len() <= i || l.len() < i {
            return Err(Error::InvalidArgument(format!(
                "F_{i} needs d_0..d_{i} and l_0..l_{}",
                i as isize - 1
            )));
        }
        (0..=i)
            .map(|j| {
                let base = if j == i {
                    d[i]
                } else {
                    match self.cfg.dependency {
                        DependencyMode::Caflow => g.concat_channels(d[j], l[j])?,
                        DependencyMode::DualGlow => {
                            let [b, c, h, w] = g.shape(d[j]);
                            g.constant(Tensor::zeros([b, 2 * c, h, w]))
                        }
                    }
                };
                if j >= 1 {
                    g.squeeze(base)
                } else {
                    Ok(base)
                }
            })
            .collect()
    }

    fn check_level<T: Element>(&self, cx: &Cx<T>, i: usize, l_i: Var) -> Result<()> {
        let want = self.cfg.flow_config(0).pyramid_shapes(cx.g.shape(l_i)[0])[i];
        if cx.g.shape(l_i) != want {
            return Err(Error::ShapeMismatch {
                op: "ar_encode",
                lhs: want,
                rhs: cx.g.shape(l_i),
            });
        }
        Ok(())
    }

    /// `F_i`: `l_i ↦ (z_0^i, …, z_i^i)` with the summed log-determinant.
    /// The returned vector is indexed by `j`.
    pub fn ar_encode<T: Element>(
        &self,
        cx: &Cx<T>,
        i: usize,
        l_i: Var,
        conds: &[Var],
    ) -> Result<(Vec<Var>, Var)> {
        self.check_level(cx, i, l_i)?;
        let g = cx.g;
        let mut z: Vec<Option<Var>> = vec![None; i + 1];
        let mut x = l_i;
        let mut log_det = None;
        for j in (0..=i).rev() {
            let out = self.subflows[self.table[i][j]].forward(cx, x, conds[j])?;
            z[j] = Some(out.emitted);
            log_det = Some(match log_det {
                None => out.log_det,
                Some(ld) => g.add(ld, out.log_det)?,
            });
            if let Some(c) = out.carry {
                x = c;
            }
        }
        Ok((
            z.into_iter()
                .map(|v| v.expect("every level emitted"))
                .collect(),
            log_det.expect("at least one sub-flow"),
        ))
    }

    /// Inverse of [`CaflowModel::ar_encode`] for the same conditioning.
    pub fn ar_decode<T: Element>(
        &self,
        cx: &Cx<T>,
        i: usize,
        z: &[Var],
        conds: &[Var],
    ) -> Result<Var> {
        if z.len() != i + 1 || conds.len() != i + 1 {
            return Err(Error::InvalidArgument(format!(
                "F_{i} needs {} latents and conditions",
                i + 1
            )));
        }
        let batch = cx.g.shape(z[0])[0];
        for (j, want) in self.cfg.z_shapes(i, batch).into_iter().enumerate() {
            if cx.g.shape(z[j]) != want {
                return Err(Error::ShapeMismatch {
                    op: "ar_decode",
                    lhs: want,
                    rhs: cx.g.shape(z[j]),
                });
            }
        }
        let mut carry = None;
        for j in 0..=i {
            carry = Some(self.subflows[self.table[i][j]].inverse(cx, z[j], carry, conds[j])?);
        }
        Ok(carry.expect("at least one sub-flow"))
    }

    /// `Σ_j log N(z_j^i) + log|det ∂F_i|` given `l_i` and its conditioning.
    pub fn component_log_prob<T: Element>(
        &self,
        cx: &Cx<T>,
        i: usize,
        l_i: Var,
        conds: &[Var],
    ) -> Result<(Var, Vec<Var>)> {
        let g = cx.g;
        let (z, ld) = self.ar_encode(cx, i, l_i, conds)?;
        let mut lp = ld;
        for &zj in &z {
            lp = g.add(lp, gaussian_log_prob(cx, zj)?)?;
        }
        Ok((lp, z))
    }

    /// Evaluates every likelihood term for continuous `w` and `y`. The `d`
    /// pyramid enters the conditional term detached.
    pub fn forward_joint<T: Element>(&self, cx: &Cx<T>, w: Var, y: Var) -> Result<JointTerms> {
        let g = cx.g;
        let r_enc = self.r.encode(cx, y)?;
        let y_log_prob = self.r.log_prob_of(cx, &r_enc)?;
        let d: Vec<Var> = r_enc.pyramid.levels.iter().map(|&v| g.detach(v)).collect();
        let t_enc = self.t.encode(cx, w)?;
        let l = t_enc.pyramid.levels.clone();
        let mut cond_log_prob = t_enc.log_det;
        let mut components = Vec::with_capacity(self.cfg.n_scales);
        let mut zs = Vec::with_capacity(self.cfg.n_scales);
        for i in 0..self.cfg.n_scales {
            let conds = self.conditions(cx, i, &d, &l[..i])?;
            let (lp, z) = self.component_log_prob(cx, i, l[i], &conds)?;
            cond_log_prob = g.add(cond_log_prob, lp)?;
            components.push(lp);
            zs.push(z);
        }
        if !g.value(cond_log_prob).is_finite() {
            return Err(Error::NonFinite {
                op: "conditional log-likelihood",
            });
        }
        Ok(JointTerms {
            cond_log_prob,
            y_log_prob,
            t_log_det: t_enc.log_det,
            components,
            d: LatentPyramid::new(d),
            l: t_enc.pyramid,
            z: zs,
        })
    }

    /// `log p(w | y)` in nats per batch element.
    pub fn conditional_log_prob<T: Element>(&self, cx: &Cx<T>, w: Var, y: Var) -> Result<Var> {
        Ok(self.forward_joint(cx, w, y)?.cond_log_prob)
    }

    /// Samples `w ~ p(· | y)` at temperature `τ` for a continuous `y`.
    pub fn conditional_sample<T: Element>(
        &self,
        store: &ParamStore<T>,
        y: &Tensor<T>,
        rng: &mut Rng,
        temperature: f64,
    ) -> Result<ConditionalSample<T>> {
        let g = Graph::no_grad();
        let cx = Cx::new(&g, store);
        let batch = y.batch();
        let d = self.r.encode(&cx, g.constant(y.clone()))?.pyramid.levels;
        let mut l: Vec<Var> = Vec::with_capacity(self.cfg.n_scales);
        let mut z_all = Vec::with_capacity(self.cfg.n_scales);
        for i in 0..self.cfg.n_scales {
            let z: Vec<Tensor<T>> = self
                .cfg
                .z_shapes(i, batch)
                .into_iter()
                .map(|s| normal_sample(rng, s, temperature))
                .collect::<Result<_>>()?;
            let zv: Vec<Var> = z.iter().map(|t| g.constant(t.clone())).collect();
            let conds = self.conditions(&cx, i, &d, &l)?;
            l.push(self.ar_decode(&cx, i, &zv, &conds)?);
            z_all.push(z);
        }
        let image = self.t.decode(&cx, &LatentPyramid::new(l.clone()))?;
        Ok(ConditionalSample {
            image: g.value(image).as_ref().clone(),
            l: l.iter().map(|&v| g.value(v).as_ref().clone()).collect(),
            z: z_all,
        })
    }

    /// Data-dependent actnorm initialization of every flow (dequantizers
    /// included) from one batch of integer-valued pixels.
    pub fn data_init<T: Element>(
        &self,
        store: &mut ParamStore<T>,
        w: &Tensor<T>,
        y: &Tensor<T>,
        rng: &mut Rng,
    ) -> Result<()> {
        let updates = {
            let g = Graph::no_grad();
            let cx = Cx::for_data_init(&g, store);
            let (wd, _) = self.t.dequantizer().dequantize(&cx, w, rng)?;
            let (yd, _) = self.r.dequantizer().dequantize(&cx, y, rng)?;
            self.forward_joint(&cx, wd, yd)?;
            cx.init_updates()
        };
        for (id, value) in updates {
            store.set(id, value)?;
        }
        Ok(())
    }
}

/// Indices ordering samples by descending log-likelihood; ties keep input
/// order and NaN ranks last.
pub fn rank_by_likelihood(log_likelihoods: &[f64]) -> Result<Vec<usize>> {
    if log_likelihoods.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot rank an empty sample list".into(),
        ));
    }
    let key = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    let mut idx: Vec<usize> = (0..log_likelihoods.len()).collect();
    idx.sort_by(|&a, &b| key(log_likelihoods[b]).total_cmp(&key(log_likelihoods[a])));
    Ok(idx)
}
