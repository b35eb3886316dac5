use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Global L2 norm over all present gradients.
pub fn global_norm<T: Element>(grads: &[Option<Tensor<T>>]) -> f64 {
    grads
        .iter()
        .flatten()
        .flat_map(|g| g.data().iter())
        .map(|v| v.f64() * v.f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping; non-finite gradients are an error.
pub fn clip_gradients<T: Element>(grads: &mut [Option<Tensor<T>>], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::InvalidArgument("clip norm must be positive".into()));
    }
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { op: "gradient" });
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        let f = T::of(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= f;
            }
        }
    }
    Ok(norm)
}
