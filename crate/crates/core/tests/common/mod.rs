//! Shared fixtures for the integration tests and the acceptance suite.
#![allow(dead_code)]

use caflow::caflow::{CaflowModel, CondSubFlow, DependencyMode, ModelConfig, WeightSharing};
use caflow::data::{synthetic_dataset, PairedSet, Task};
use caflow::layers::{
    ActNorm, AffineCoupling, AffineInjector, Bijector, Builder, CondAffineCoupling, CondFlowStep,
    ConditionalBijector, DequantKind, FlowStep, InitMode, InvConv1x1, LayerOutput, Squeeze,
    TransitionStep,
};
use caflow::params::{Cx, ParamStore};
use caflow::tensor::Shape;
use caflow::train::TrainConfig;
use caflow::{Element, Result, Rng, Tensor, Var};

pub enum AnyLayer {
    ActNorm(ActNorm),
    InvConv(InvConv1x1),
    Coupling(AffineCoupling),
    Squeeze(Squeeze),
    Step(FlowStep),
    Transition(TransitionStep),
    CondCoupling(CondAffineCoupling),
    Injector(AffineInjector),
    CondStep(CondFlowStep),
    SubFlow(CondSubFlow),
}

impl AnyLayer {
    /// Forward pass; a resampling sub-flow returns `[emitted, carry]`
    /// concatenated along channels.
    pub fn forward<T: Element>(
        &self,
        cx: &Cx<T>,
        x: Var,
        cond: Option<Var>,
    ) -> Result<LayerOutput> {
        let c = || cond.expect("conditional layer needs a condition");
        match self {
            AnyLayer::ActNorm(l) => l.forward(cx, x),
            AnyLayer::InvConv(l) => l.forward(cx, x),
            AnyLayer::Coupling(l) => l.forward(cx, x),
            AnyLayer::Squeeze(l) => l.forward(cx, x),
            AnyLayer::Step(l) => l.forward(cx, x),
            AnyLayer::Transition(l) => l.forward(cx, x),
            AnyLayer::CondCoupling(l) => l.forward(cx, x, c()),
            AnyLayer::Injector(l) => l.forward(cx, x, c()),
            AnyLayer::CondStep(l) => l.forward(cx, x, c()),
            AnyLayer::SubFlow(l) => {
                let out = l.forward(cx, x, c())?;
                let y = match out.carry {
                    Some(carry) => cx.g.concat_channels(out.emitted, carry)?,
                    None => out.emitted,
                };
                Ok(LayerOutput {
                    y,
                    log_det: out.log_det,
                })
            }
        }
    }

    pub fn inverse<T: Element>(&self, cx: &Cx<T>, y: Var, cond: Option<Var>) -> Result<Var> {
        let c = || cond.expect("conditional layer needs a condition");
        match self {
            AnyLayer::ActNorm(l) => l.inverse(cx, y),
            AnyLayer::InvConv(l) => l.inverse(cx, y),
            AnyLayer::Coupling(l) => l.inverse(cx, y),
            AnyLayer::Squeeze(l) => l.inverse(cx, y),
            AnyLayer::Step(l) => l.inverse(cx, y),
            AnyLayer::Transition(l) => l.inverse(cx, y),
            AnyLayer::CondCoupling(l) => l.inverse(cx, y, c()),
            AnyLayer::Injector(l) => l.inverse(cx, y, c()),
            AnyLayer::CondStep(l) => l.inverse(cx, y, c()),
            AnyLayer::SubFlow(l) => {
                if l.resamples() {
                    let half = cx.g.shape(y)[1] / 2;
                    let (e, carry) = cx.g.split_channels(y, half)?;
                    l.inverse(cx, e, Some(carry), c())
                } else {
                    l.inverse(cx, y, None, c())
                }
            }
        }
    }
}

pub struct LayerCase {
    pub name: &'static str,
    pub layer: AnyLayer,
    pub store: ParamStore<f64>,
    /// Per-example input shape (batch 1), at most 16 dimensions.
    pub x_shape: Shape,
    pub cond_shape: Option<Shape>,
}

fn case(
    name: &'static str,
    seed: u64,
    x_shape: Shape,
    cond_shape: Option<Shape>,
    make: impl FnOnce(&mut Builder<f64>) -> Result<AnyLayer>,
) -> LayerCase {
    let mut store = ParamStore::new();
    let mut rng = Rng::new(seed);
    let layer =
        make(&mut Builder::new(&mut store, &mut rng, InitMode::Standard)).expect("layer builds");
    // Move away from the identity-like initialization so every path matters.
    store.perturb(&mut rng, 0.1);
    LayerCase {
        name,
        layer,
        store,
        x_shape,
        cond_shape,
    }
}

/// Every invertible layer type, with randomized parameters.
pub fn layer_zoo() -> Vec<LayerCase> {
    let x = [1, 4, 2, 2];
    let cond = Some([1, 3, 2, 2]);
    vec![
        case("actnorm", 1, x, None, |b| {
            Ok(AnyLayer::ActNorm(ActNorm::new(b, "a", 4)))
        }),
        case("invconv1x1", 2, x, None, |b| {
            Ok(AnyLayer::InvConv(InvConv1x1::new(b, "c", 4)))
        }),
        case("affine_coupling", 3, x, None, |b| {
            Ok(AnyLayer::Coupling(AffineCoupling::new(b, "k", 4, 8)?))
        }),
        case("squeeze", 4, [1, 1, 4, 4], None, |_| {
            Ok(AnyLayer::Squeeze(Squeeze))
        }),
        case("flow_step", 5, x, None, |b| {
            Ok(AnyLayer::Step(FlowStep::new(b, "s", 4, 8)?))
        }),
        case("transition_step", 6, x, None, |b| {
            Ok(AnyLayer::Transition(TransitionStep::new(b, "t", 4)))
        }),
        case("cond_affine_coupling", 7, x, cond, |b| {
            Ok(AnyLayer::CondCoupling(CondAffineCoupling::new(
                b, "ck", 4, 3, 8,
            )?))
        }),
        case("affine_injector", 8, x, cond, |b| {
            Ok(AnyLayer::Injector(AffineInjector::new(b, "i", 4, 3, 8)))
        }),
        case("cond_flow_step", 9, x, cond, |b| {
            Ok(AnyLayer::CondStep(CondFlowStep::new(b, "cs", 4, 3, 8)?))
        }),
        case(
            "cond_subflow_resampling",
            10,
            [1, 1, 4, 4],
            Some([1, 12, 2, 2]),
            |b| {
                Ok(AnyLayer::SubFlow(CondSubFlow::new(
                    b, "sf", 1, 12, true, 2, 8,
                )?))
            },
        ),
        case("cond_subflow_base", 11, x, cond, |b| {
            Ok(AnyLayer::SubFlow(CondSubFlow::new(
                b, "sf0", 4, 3, false, 2, 8,
            )?))
        }),
    ]
}

pub fn normal_tensor<T: Element>(rng: &mut Rng, shape: Shape, std: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(std * rng.normal()))
}

pub fn with_batch(shape: Shape, batch: usize) -> Shape {
    [batch, shape[1], shape[2], shape[3]]
}

/// Integer pixel batch in `0..=255`.
pub fn pixels<T: Element>(rng: &mut Rng, shape: Shape) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.below(256) as f64))
}

/// Continuous image batch in `[0, 1)`.
pub fn unit_images<T: Element>(rng: &mut Rng, shape: Shape) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.uniform()))
}

pub fn micro_config(channels: usize, size: usize, n_scales: usize) -> ModelConfig {
    ModelConfig {
        channels,
        size,
        n_scales,
        r_steps: 1,
        t_steps: 1,
        cond_steps: 1,
        hidden: 8,
        cond_hidden: 8,
        dependency: DependencyMode::Caflow,
        sharing: WeightSharing::Off,
        dequant: DequantKind::Uniform,
        dequant_steps: 1,
    }
}

/// A model with randomized parameters in every layer.
pub fn perturbed_model<T: Element>(
    cfg: &ModelConfig,
    seed: u64,
    std: f64,
) -> (CaflowModel, ParamStore<T>) {
    let (model, mut store) =
        CaflowModel::build::<T>(cfg, seed, InitMode::Standard).expect("model builds");
    store.perturb(&mut Rng::with_stream(seed, 99), std);
    (model, store)
}

/// The toy colorization setting used by the training checks: 8×8 RGB
/// synthetic images, 200 training pairs, a two-scale model.
pub fn toy_model_config(dependency: DependencyMode) -> ModelConfig {
    ModelConfig {
        channels: 3,
        size: 8,
        n_scales: 2,
        r_steps: 2,
        t_steps: 2,
        cond_steps: 2,
        hidden: 16,
        cond_hidden: 16,
        dependency,
        sharing: WeightSharing::Off,
        dequant: DequantKind::Uniform,
        dequant_steps: 1,
    }
}

pub fn toy_train_config(seed: u64, max_iters: u64) -> TrainConfig {
    TrainConfig {
        warmup_iters: 100,
        // 0.999 would keep e^-1 of the initial weights after 1000 steps.
        ema_rate: 0.99,
        batch_size: 16,
        init_batch_size: 64,
        max_iters,
        val_every: 100,
        seed,
        ..TrainConfig::default()
    }
}

/// `[train, val, test]` toy colorization splits.
pub fn toy_colorization() -> [PairedSet; 3] {
    synthetic_dataset(Task::Colorize, [200, 32, 32], 8, 3, 1).expect("synthetic data")
}
