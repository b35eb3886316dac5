//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is an append-only tape. Every operation pushes one node whose
//! parents were pushed earlier, so walking node ids in descending order is a
//! reverse topological order and each node is visited exactly once.

use std::cell::RefCell;
use std::rc::Rc;

use super::conv::{
    conv2d_forward, conv2d_grad_bias, conv2d_grad_input, conv2d_grad_weight, ConvGeometry,
};
use super::{Element, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    LogAbs(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Relu(Var),
    SumPerBatch(Var),
    SumAll(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Slice {
        x: Var,
        start: usize,
    },
    Concat(Var, Var),
    Squeeze(Var),
    Unsqueeze(Var),
    Plu {
        lower: Var,
        upper: Var,
        log_s: Var,
        perm: Vec<usize>,
        sign: Vec<T>,
    },
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Concat(a, b) => vec![*a, *b],
            Neg(a)
            | Scale(a, _)
            | AddScalar(a)
            | Exp(a)
            | Log(a)
            | LogAbs(a)
            | Tanh(a)
            | Sigmoid(a)
            | Softplus(a)
            | Relu(a)
            | SumPerBatch(a)
            | SumAll(a)
            | Squeeze(a)
            | Unsqueeze(a) => vec![*a],
            Slice { x, .. } => vec![*x],
            Conv2d { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Plu {
                lower,
                upper,
                log_s,
                ..
            } => vec![*lower, *upper, *log_s],
        }
    }
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T: Element> {
    nodes: RefCell<Vec<Node<T>>>,
    record: bool,
    check_finite: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    /// Recording graph. Non-finite checks default to on in debug builds.
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            record: true,
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Evaluation-only graph: values are computed but nothing is recorded
    /// for the backward pass.
    pub fn no_grad() -> Self {
        Self {
            record: false,
            ..Self::new()
        }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            needs_grad: requires_grad && self.record,
        });
        Var(nodes.len() - 1)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes.borrow()[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    /// Same value, cut from the tape.
    pub fn detach(&self, v: Var) -> Var {
        let value = self.value(v);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(nodes.len() - 1)
    }

    fn push(&self, name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = self.record && op.parents().iter().any(|p| nodes[p.0].needs_grad);
        nodes.push(Node {
            value: Rc::new(value),
            op: if needs_grad { op } else { Op::Leaf },
            needs_grad,
        });
        Ok(Var(nodes.len() - 1))
    }

    fn binary(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.zip_broadcast(&vb, name, f)?;
        self.push(name, out, op)
    }

    fn unary(&self, name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let out = self.value(a).map(f);
        self.push(name, out, op)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().iter().any(|v| *v == T::zero()) {
            return Err(Error::Domain {
                op: "div",
                reason: "division by zero",
            });
        }
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn neg(&self, a: Var) -> Result<Var> {
        self.unary("neg", a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&self, a: Var, c: f64) -> Result<Var> {
        let k = T::of(c);
        self.unary("scale", a, move |x| x * k, Op::Scale(a, c))
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Result<Var> {
        let k = T::of(c);
        self.unary("add_scalar", a, move |x| x + k, Op::AddScalar(a))
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        self.unary("exp", a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|v| !(*v > T::zero())) {
            return Err(Error::Domain {
                op: "log",
                reason: "input must be strictly positive",
            });
        }
        self.unary("log", a, |x| x.ln(), Op::Log(a))
    }

    /// `log|x|`.
    pub fn log_abs(&self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|v| *v == T::zero()) {
            return Err(Error::Domain {
                op: "log_abs",
                reason: "input must be non-zero",
            });
        }
        self.unary("log_abs", a, |x| x.abs().ln(), Op::LogAbs(a))
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        self.unary("tanh", a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    /// `log(1 + e^x)`, evaluated stably.
    pub fn softplus(&self, a: Var) -> Result<Var> {
        self.unary("softplus", a, softplus, Op::Softplus(a))
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(T::zero()), Op::Relu(a))
    }

    /// Per-batch-element sum, shape `(B, 1, 1, 1)`.
    pub fn sum_per_batch(&self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let [b, ..] = v.shape();
        let out = v.reduce_to([b, 1, 1, 1]);
        self.push("sum_per_batch", out, Op::SumPerBatch(a))
    }

    /// Sum of all elements, shape `(1, 1, 1, 1)`.
    pub fn sum_all(&self, a: Var) -> Result<Var> {
        let out = self.value(a).reduce_to([1, 1, 1, 1]);
        self.push("sum_all", out, Op::SumAll(a))
    }

    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        let vb = b.map(|b| self.value(b));
        let out = conv2d_forward(&vx, &vw, vb.as_deref())?;
        self.push("conv2d", out, Op::Conv2d { x, w, b })
    }

    pub fn channel_slice(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        if len == 0 || start + len > v.channels() {
            return Err(Error::InvalidShape {
                op: "channel_slice",
                shape: v.shape(),
                reason: "slice out of range",
            });
        }
        let out = v.channel_slice(start, len);
        self.push("channel_slice", out, Op::Slice { x, start })
    }

    /// Splits channels into `[0, at)` and `[at, C)`.
    pub fn split_channels(&self, x: Var, at: usize) -> Result<(Var, Var)> {
        let c = self.shape(x)[1];
        if at == 0 || at >= c {
            return Err(Error::InvalidShape {
                op: "channel_split",
                shape: self.shape(x),
                reason: "split index must satisfy 0 < at < C",
            });
        }
        Ok((
            self.channel_slice(x, 0, at)?,
            self.channel_slice(x, at, c - at)?,
        ))
    }

    pub fn concat_channels(&self, a: Var, b: Var) -> Result<Var> {
        let out = Tensor::concat_channels(&self.value(a), &self.value(b))?;
        self.push("channel_concat", out, Op::Concat(a, b))
    }

    pub fn squeeze(&self, x: Var) -> Result<Var> {
        let out = self.value(x).squeeze2x2()?;
        self.push("squeeze", out, Op::Squeeze(x))
    }

    pub fn unsqueeze(&self, x: Var) -> Result<Var> {
        let out = self.value(x).unsqueeze2x2()?;
        self.push("unsqueeze", out, Op::Unsqueeze(x))
    }

    /// Composes `W = P·L·U` as a `(C, C, 1, 1)` kernel. `lower` and `upper`
    /// are `(C, C, 1, 1)` with only their strict triangles used; the diagonal
    /// of `U` is `sign ⊙ exp(log_s)` with `log_s` of shape `(1, C, 1, 1)`.
    /// Row `r` of `W` is row `perm[r]` of `L·U`.
    pub fn plu_weight(
        &self,
        lower: Var,
        upper: Var,
        log_s: Var,
        perm: &[usize],
        sign: &[T],
    ) -> Result<Var> {
        let c = perm.len();
        let (vl, vu, vs) = (self.value(lower), self.value(upper), self.value(log_s));
        if vl.shape() != [c, c, 1, 1]
            || vu.shape() != [c, c, 1, 1]
            || vs.shape() != [1, c, 1, 1]
            || sign.len() != c
        {
            return Err(Error::InvalidShape {
                op: "plu_weight",
                shape: vl.shape(),
                reason: "PLU factors must be CxC with C-length diagonal",
            });
        }
        let (l, u) = plu_factors(vl.data(), vu.data(), vs.data(), sign);
        let a = matmul(&l, &u, c);
        let mut w = vec![T::zero(); c * c];
        for r in 0..c {
            w[r * c..(r + 1) * c].copy_from_slice(&a[perm[r] * c..(perm[r] + 1) * c]);
        }
        let out = Tensor::new([c, c, 1, 1], w)?;
        self.push(
            "plu_weight",
            out,
            Op::Plu {
                lower,
                upper,
                log_s,
                perm: perm.to_vec(),
                sign: sign.to_vec(),
            },
        )
    }

    /// Reverse-mode pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let lv = &nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::InvalidShape {
                op: "backward",
                shape: lv.shape(),
                reason: "loss must be a single element",
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (parent, pg) in local_grads(&nodes, node, &g) {
                if !nodes[parent.0].needs_grad {
                    continue;
                }
                accumulate(&mut grads[parent.0], pg);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn accumulate<T: Element>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Element>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn matmul<T: Element>(a: &[T], b: &[T], c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c * c];
    for i in 0..c {
        for k in 0..c {
            let aik = a[i * c + k];
            if aik == T::zero() {
                continue;
            }
            for j in 0..c {
                out[i * c + j] += aik * b[k * c + j];
            }
        }
    }
    out
}

/// Dense `L` (unit lower) and `U` (upper with signed exp diagonal).
pub(crate) fn plu_factors<T: Element>(
    lower: &[T],
    upper: &[T],
    log_s: &[T],
    sign: &[T],
) -> (Vec<T>, Vec<T>) {
    let c = log_s.len();
    let mut l = vec![T::zero(); c * c];
    let mut u = vec![T::zero(); c * c];
    for r in 0..c {
        for k in 0..c {
            if k < r {
                l[r * c + k] = lower[r * c + k];
            } else if k == r {
                l[r * c + k] = T::one();
                u[r * c + k] = sign[r] * log_s[r].exp();
            } else {
                u[r * c + k] = upper[r * c + k];
            }
        }
    }
    (l, u)
}

fn local_grads<T: Element>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &Tensor<T>,
) -> Vec<(Var, Tensor<T>)> {
    let val = |v: Var| nodes[v.0].value.as_ref();
    let zip = |a: &Tensor<T>, b: &Tensor<T>, f: fn(T, T) -> T| {
        a.zip_broadcast(b, "backward", f)
            .expect("broadcast in backward")
    };
    match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![
            (*a, g.reduce_to(val(*a).shape())),
            (*b, g.reduce_to(val(*b).shape())),
        ],
        Op::Sub(a, b) => vec![
            (*a, g.reduce_to(val(*a).shape())),
            (*b, g.reduce_to(val(*b).shape()).map(|x| -x)),
        ],
        Op::Mul(a, b) => {
            let ga = zip(g, val(*b), |x, y| x * y).reduce_to(val(*a).shape());
            let gb = zip(g, val(*a), |x, y| x * y).reduce_to(val(*b).shape());
            vec![(*a, ga), (*b, gb)]
        }
        Op::Div(a, b) => {
            let ga = zip(g, val(*b), |x, y| x / y).reduce_to(val(*a).shape());
            // d(a/b)/db = -(a/b)/b
            let q = zip(&node.value, val(*b), |x, y| x / y);
            let gb = zip(g, &q, |x, y| -x * y).reduce_to(val(*b).shape());
            vec![(*a, ga), (*b, gb)]
        }
        Op::Neg(a) => vec![(*a, g.map(|x| -x))],
        Op::Scale(a, c) => {
            let k = T::of(*c);
            vec![(*a, g.map(|x| x * k))]
        }
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::Exp(a) => vec![(*a, zip(g, &node.value, |x, y| x * y))],
        Op::Log(a) | Op::LogAbs(a) => vec![(*a, zip(g, val(*a), |x, y| x / y))],
        Op::Tanh(a) => vec![(*a, zip(g, &node.value, |x, y| x * (T::one() - y * y)))],
        Op::Sigmoid(a) => vec![(*a, zip(g, &node.value, |x, y| x * y * (T::one() - y)))],
        Op::Softplus(a) => vec![(*a, zip(g, val(*a), |x, y| x * sigmoid(y)))],
        Op::Relu(a) => vec![(
            *a,
            zip(g, val(*a), |x, y| if y > T::zero() { x } else { T::zero() }),
        )],
        Op::SumPerBatch(a) | Op::SumAll(a) => {
            let shape: Shape = val(*a).shape();
            let out = g
                .zip_broadcast(&Tensor::zeros(shape), "backward", |x, _| x)
                .expect("sum backward");
            vec![(*a, out)]
        }
        Op::Conv2d { x, w, b } => {
            let (vx, vw) = (val(*x), val(*w));
            let geom = ConvGeometry::check(vx, vw, None).expect("conv geometry");
            let mut out = Vec::with_capacity(3);
            if nodes[x.0].needs_grad {
                out.push((*x, conv2d_grad_input(geom, vw, g)));
            }
            if nodes[w.0].needs_grad {
                out.push((*w, conv2d_grad_weight(geom, vx, g)));
            }
            if let Some(b) = b {
                if nodes[b.0].needs_grad {
                    out.push((*b, conv2d_grad_bias(geom, g)));
                }
            }
            out
        }
        Op::Slice { x, start } => {
            let [b, c, h, w] = val(*x).shape();
            let len = g.channels();
            let plane = h * w;
            let mut full = Tensor::zeros([b, c, h, w]);
            for bi in 0..b {
                let dst = (bi * c + start) * plane;
                full.data_mut()[dst..dst + len * plane]
                    .copy_from_slice(&g.data()[bi * len * plane..(bi + 1) * len * plane]);
            }
            vec![(*x, full)]
        }
        Op::Concat(a, b) => {
            let ca = val(*a).channels();
            let cb = val(*b).channels();
            vec![(*a, g.channel_slice(0, ca)), (*b, g.channel_slice(ca, cb))]
        }
        Op::Squeeze(a) => vec![(*a, g.unsqueeze2x2().expect("unsqueeze in backward"))],
        Op::Unsqueeze(a) => vec![(*a, g.squeeze2x2().expect("squeeze in backward"))],
        Op::Plu {
            lower,
            upper,
            log_s,
            perm,
            sign,
        } => {
            let c = perm.len();
            let (l, u) = plu_factors(
                val(*lower).data(),
                val(*upper).data(),
                val(*log_s).data(),
                sign,
            );
            let mut da = vec![T::zero(); c * c];
            for r in 0..c {
                for j in 0..c {
                    da[perm[r] * c + j] += g.data()[r * c + j];
                }
            }
            // dL = dA·Uᵀ (strict lower), dU = Lᵀ·dA (upper)
            let mut dl = vec![T::zero(); c * c];
            let mut du = vec![T::zero(); c * c];
            let mut ds = vec![T::zero(); c];
            for k in 0..c {
                for m in 0..k {
                    let mut s = T::zero();
                    for j in 0..c {
                        s += da[k * c + j] * u[m * c + j];
                    }
                    dl[k * c + m] = s;
                }
            }
            for m in 0..c {
                for j in m..c {
                    let mut s = T::zero();
                    for k in 0..c {
                        s += l[k * c + m] * da[k * c + j];
                    }
                    if j == m {
                        ds[m] = s * u[m * c + m];
                    } else {
                        du[m * c + j] = s;
                    }
                }
            }
            vec![
                (*lower, Tensor::new([c, c, 1, 1], dl).expect("plu grad")),
                (*upper, Tensor::new([c, c, 1, 1], du).expect("plu grad")),
                (*log_s, Tensor::new([1, c, 1, 1], ds).expect("plu grad")),
            ]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::oracle::finite_diff_grad;
    use crate::tensor::Rng;

    fn rand(rng: &mut Rng, shape: Shape) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.normal())
    }

    /// Compares the tape gradient of `build` with central differences.
    fn check(shape: Shape, seed: u64, build: impl Fn(&Graph<f64>, Var) -> Result<Var>) {
        let mut rng = Rng::new(seed);
        let x = rand(&mut rng, shape);
        let g = Graph::new();
        let v = g.leaf(x.clone(), true);
        let out = build(&g, v).unwrap();
        let loss = g.sum_all(out).unwrap();
        let grads = g.backward(loss).unwrap();
        let ad = grads
            .get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape));
        let fd = finite_diff_grad(
            |t| {
                let g = Graph::no_grad();
                let v = g.constant(t.clone());
                let out = build(&g, v)?;
                Ok(g.value(out).sum_f64())
            },
            &x,
            1e-6,
        )
        .unwrap();
        for (a, f) in ad.data().iter().zip(fd.data()) {
            let denom = a.abs().max(f.abs()).max(1e-8);
            assert!(
                (a - f).abs() / denom < 1e-3 || (a - f).abs() < 1e-8,
                "ad {a} fd {f}"
            );
        }
    }

    #[test]
    fn elementwise_values() {
        let g = Graph::<f32>::no_grad();
        let z = g.constant(Tensor::zeros([1, 1, 2, 2]));
        assert_eq!(g.value(g.exp(z).unwrap()).data(), &[1.0; 4]);
        let a = g.constant(Tensor::new([1, 2, 1, 1], vec![2.0, 3.0]).unwrap());
        let b = g.constant(Tensor::new([1, 2, 1, 1], vec![4.0, 5.0]).unwrap());
        assert_eq!(g.value(g.mul(a, b).unwrap()).data(), &[8.0, 15.0]);
        let x = g.constant(Tensor::new([1, 2, 1, 1], vec![1.5, -2.5]).unwrap());
        let zero = g.constant(Tensor::scalar(0.0));
        assert_eq!(*g.value(g.add(x, zero).unwrap()), *g.value(x));
    }

    #[test]
    fn log_requires_positive_input() {
        let g = Graph::<f32>::new();
        let x = g.constant(Tensor::new([1, 1, 1, 2], vec![1.0, 0.0]).unwrap());
        assert!(g.log(x).is_err());
    }

    #[test]
    fn broadcast_mismatch_rejected() {
        let g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros([1, 2, 1, 1]));
        let b = g.constant(Tensor::zeros([1, 3, 1, 1]));
        assert!(g.add(a, b).is_err());
    }

    #[test]
    fn non_finite_result_is_an_error() {
        let g = Graph::<f32>::new().with_finite_checks(true);
        let x = g.constant(Tensor::full([1, 1, 1, 1], 1000.0));
        assert!(matches!(g.exp(x), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn unused_outputs_have_no_gradient() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full([1, 1, 1, 1], 2.0), true);
        let y = g.leaf(Tensor::full([1, 1, 1, 1], 3.0), true);
        let _unused = g.exp(y).unwrap();
        let loss = g.mul(x, x).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[4.0]);
        assert!(grads.get(y).is_none());
    }

    #[test]
    fn grad_unary_ops() {
        check([1, 2, 2, 2], 1, |g, x| g.exp(x));
        check([1, 2, 2, 2], 2, |g, x| g.tanh(x));
        check([1, 2, 2, 2], 3, |g, x| g.sigmoid(x));
        check([1, 2, 2, 2], 4, |g, x| g.softplus(x));
        check([1, 2, 2, 2], 5, |g, x| g.log_abs(x));
        check([1, 2, 2, 2], 6, |g, x| {
            let e = g.exp(x)?;
            g.log(e)
        });
        check([1, 2, 2, 2], 7, |g, x| g.relu(x));
        check([1, 2, 2, 2], 8, |g, x| g.scale(x, -2.5));
    }

    #[test]
    fn grad_binary_broadcast_ops() {
        let mut rng = Rng::new(99);
        let s = rand(&mut rng, [1, 2, 1, 1]);
        check([2, 2, 2, 2], 9, |g, x| {
            let c = g.constant(s.clone());
            let y = g.mul(x, c)?;
            let z = g.add(y, c)?;
            g.div(z, g.add_scalar(g.exp(c)?, 1.0)?)
        });
        // gradient flowing into the broadcast operand
        check([1, 2, 1, 1], 10, |g, x| {
            let big = g.constant(Tensor::from_fn([3, 2, 2, 2], |[b, c, h, w]| {
                (b + c + h + w) as f64 * 0.1 + 0.3
            }));
            let y = g.mul(big, x)?;
            let y = g.sub(y, x)?;
            g.div(y, g.add_scalar(g.exp(x)?, 0.5)?)
        });
    }

    #[test]
    fn grad_concat_routes_to_halves() {
        check([1, 4, 2, 2], 12, |g, x| {
            let (a, b) = g.split_channels(x, 2)?;
            let a2 = g.scale(a, 3.0)?;
            let b2 = g.exp(b)?;
            let c = g.concat_channels(b2, a2)?;
            g.mul(c, c)
        });
    }

    #[test]
    fn grad_squeeze_and_reductions() {
        check([1, 1, 4, 4], 13, |g, x| {
            let s = g.squeeze(x)?;
            let w = g.constant(Tensor::from_fn([1, 4, 1, 1], |[_, c, _, _]| c as f64 + 1.0));
            let y = g.mul(s, w)?;
            let y = g.mul(y, y)?;
            let u = g.unsqueeze(y)?;
            g.sum_per_batch(u)
        });
    }

    #[test]
    fn grad_conv2d_all_arguments() {
        let mut rng = Rng::new(21);
        let x0 = rand(&mut rng, [2, 2, 3, 4]);
        let w0 = rand(&mut rng, [3, 2, 3, 3]);
        let b0 = rand(&mut rng, [1, 3, 1, 1]);
        let (xc, bc) = (x0.clone(), b0.clone());
        check([3, 2, 3, 3], 22, move |g, w| {
            let x = g.constant(xc.clone());
            let b = g.constant(bc.clone());
            let y = g.conv2d(x, w, Some(b))?;
            g.mul(y, y)
        });
        let (wc, bc) = (w0.clone(), b0.clone());
        check([2, 2, 3, 4], 23, move |g, x| {
            let w = g.constant(wc.clone());
            let b = g.constant(bc.clone());
            let y = g.conv2d(x, w, Some(b))?;
            g.tanh(y)
        });
        check([1, 3, 1, 1], 24, move |g, b| {
            let x = g.constant(x0.clone());
            let w = g.constant(w0.clone());
            let y = g.conv2d(x, w, Some(b))?;
            g.mul(y, y)
        });
    }

    #[test]
    fn grad_plu_weight() {
        let mut rng = Rng::new(31);
        let x = rand(&mut rng, [1, 3, 2, 2]);
        let upper = rand(&mut rng, [3, 3, 1, 1]);
        let log_s = rand(&mut rng, [1, 3, 1, 1]);
        let lower = rand(&mut rng, [3, 3, 1, 1]);
        let perm = vec![2, 0, 1];
        let sign = vec![1.0, -1.0, 1.0];
        let (xc, uc, sc, pc, sg) = (
            x.clone(),
            upper.clone(),
            log_s.clone(),
            perm.clone(),
            sign.clone(),
        );
        check([3, 3, 1, 1], 32, move |g, l| {
            let u = g.constant(uc.clone());
            let s = g.constant(sc.clone());
            let w = g.plu_weight(l, u, s, &pc, &sg)?;
            let x = g.constant(xc.clone());
            let y = g.conv2d(x, w, None)?;
            g.mul(y, y)
        });
        let (xc, lc, pc, sg) = (x.clone(), lower.clone(), perm.clone(), sign.clone());
        check([3, 3, 1, 1], 33, move |g, u| {
            let l = g.constant(lc.clone());
            let s = g.constant(log_s.clone());
            let w = g.plu_weight(l, u, s, &pc, &sg)?;
            let x = g.constant(xc.clone());
            let y = g.conv2d(x, w, None)?;
            g.mul(y, y)
        });
        check([1, 3, 1, 1], 34, move |g, s| {
            let l = g.constant(lower.clone());
            let u = g.constant(upper.clone());
            let w = g.plu_weight(l, u, s, &perm, &sign)?;
            let xv = g.constant(x.clone());
            let y = g.conv2d(xv, w, None)?;
            g.mul(y, y)
        });
    }

    #[test]
    fn shared_operand_accumulates() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full([1, 1, 1, 1], 3.0), true);
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let grads = g.backward(z).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full([1, 1, 1, 1], 3.0), true);
        let d = g.detach(x);
        let y = g.mul(d, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0]);
    }
}
