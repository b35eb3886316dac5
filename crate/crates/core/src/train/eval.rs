//! Deterministic likelihood evaluation and best-of-M sampling.
//!
//! Evaluation draws one dequantization noise tensor per image shape from a
//! fixed seed and reuses it for every image, so a pair's score depends only
//! on the model and the two images: not on batch position, on the command
//! that computed it, or on any sampling seed.

use crate::caflow::{rank_by_likelihood, CaflowModel};
use crate::data::{Image, PairedSet};
use crate::error::Result;
use crate::layers::{dequantization_nats, quantize};
use crate::par;
use crate::params::{Cx, ParamStore};
use crate::tensor::{Element, Graph, Rng, Tensor};

const EVAL_BATCH: usize = 32;
const EVAL_NOISE_SEED: u64 = 0x5eed;

struct EvalNoise<T> {
    w: Tensor<T>,
    y: Tensor<T>,
}

fn eval_noise<T: Element>(model: &CaflowModel) -> Result<EvalNoise<T>> {
    let shape = model.config().image_shape(1);
    Ok(EvalNoise {
        w: model
            .t
            .dequantizer()
            .noise(shape, &mut Rng::with_stream(EVAL_NOISE_SEED, 0))?,
        y: model
            .r
            .dequantizer()
            .noise(shape, &mut Rng::with_stream(EVAL_NOISE_SEED, 1))?,
    })
}

fn replicate<T: Element>(t: &Tensor<T>, batch: usize) -> Result<Tensor<T>> {
    Tensor::stack(&vec![t.clone(); batch])
}

/// The continuous conditioning image used at evaluation time.
pub fn eval_condition<T: Element>(
    model: &CaflowModel,
    store: &ParamStore<T>,
    y: &Tensor<T>,
) -> Result<Tensor<T>> {
    let noise = eval_noise::<T>(model)?;
    let g = Graph::no_grad();
    let cx = Cx::new(&g, store);
    let (yd, _) =
        model
            .r
            .dequantizer()
            .dequantize_with(&cx, y, &replicate(&noise.y, y.batch())?)?;
    Ok(g.value(yd).as_ref().clone())
}

/// Estimated discrete `log P(w | y)` in nats for each pair of the integer
/// pixel batches (variational bound for learned dequantization).
pub fn log_likelihoods<T: Element>(
    model: &CaflowModel,
    store: &ParamStore<T>,
    w: &Tensor<T>,
    y: &Tensor<T>,
) -> Result<Vec<f64>> {
    let noise = eval_noise::<T>(model)?;
    let batch = w.batch();
    let g = Graph::no_grad();
    let cx = Cx::new(&g, store);
    let (wd, log_q_w) =
        model
            .t
            .dequantizer()
            .dequantize_with(&cx, w, &replicate(&noise.w, batch)?)?;
    let (yd, _) = model
        .r
        .dequantizer()
        .dequantize_with(&cx, y, &replicate(&noise.y, batch)?)?;
    let lp = model.conditional_log_prob(&cx, wd, yd)?;
    let disc = dequantization_nats(model.config().dims());
    let (lp, lq) = (g.value(lp), g.value(log_q_w));
    Ok((0..batch)
        .map(|b| lp.data()[b].f64() - lq.data()[b].f64() - disc)
        .collect())
}

/// Bits per dimension of a discrete log-likelihood in nats.
pub fn nats_to_bpd(log_likelihood: f64, dims: usize) -> f64 {
    -log_likelihood / (dims as f64 * std::f64::consts::LN_2)
}

/// Mean conditional bits per dimension over a paired set.
pub fn conditional_bpd<T: Element>(
    model: &CaflowModel,
    store: &ParamStore<T>,
    set: &PairedSet,
) -> Result<f64> {
    let dims = model.config().dims();
    let mut total = 0.0;
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (w, y) = set.batch::<T>(chunk)?;
        total += log_likelihoods(model, store, &w, &y)?
            .into_iter()
            .map(|ll| nats_to_bpd(ll, dims))
            .sum::<f64>();
    }
    Ok(total / set.len().max(1) as f64)
}

#[derive(Clone, Debug)]
pub struct RankedSample {
    pub image: Image,
    pub log_likelihood: f64,
    /// Position among the `M` generated samples.
    pub draw: usize,
}

/// Draws `num` samples for condition `y`, scores each with
/// [`log_likelihoods`], and returns the best `keep` in descending order.
/// Sample `k` uses its own stream of `seed`, so draws run in parallel.
pub fn sample_and_rank(
    model: &CaflowModel,
    store: &ParamStore<f32>,
    y: &Image,
    num: usize,
    keep: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<RankedSample>> {
    if num == 0 || keep == 0 || keep > num {
        return Err(crate::Error::InvalidArgument(format!(
            "need 1 <= keep ({keep}) <= num ({num})"
        )));
    }
    let y_int: Tensor<f32> = y.to_tensor();
    let y_cont = eval_condition(model, store, &y_int)?;
    let images = par::map_range(num, |k| -> Result<Image> {
        let mut rng = Rng::with_stream(seed, 1 << 32 | k as u64);
        let s = model.conditional_sample(store, &y_cont, &mut rng, temperature)?;
        Image::from_tensor(&quantize(&s.image), 0)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let stacked = Tensor::stack(
        &images
            .iter()
            .map(|i| i.to_tensor::<f32>())
            .collect::<Vec<_>>(),
    )?;
    let lls = log_likelihoods(model, store, &stacked, &replicate(&y_int, num)?)?;
    let order = rank_by_likelihood(&lls)?;
    Ok(order
        .into_iter()
        .take(keep)
        .map(|k| RankedSample {
            image: images[k].clone(),
            log_likelihood: lls[k],
            draw: k,
        })
        .collect())
}
