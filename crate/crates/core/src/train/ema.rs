use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Element;

/// `shadow ← rate·shadow + (1 − rate)·params`, entry by entry.
pub fn ema_update<T: Element>(
    shadow: &mut ParamStore<T>,
    params: &ParamStore<T>,
    rate: f64,
) -> Result<()> {
    if !shadow.congruent(params) {
        return Err(Error::InvalidArgument(
            "EMA shadow does not match the parameters".into(),
        ));
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "EMA rate {rate} outside [0, 1]"
        )));
    }
    for (s, p) in shadow.entries_mut().iter_mut().zip(params.entries()) {
        for (sv, &pv) in s.value.data_mut().iter_mut().zip(p.value.data()) {
            *sv = T::of(rate * sv.f64() + (1.0 - rate) * pv.f64());
        }
    }
    Ok(())
}
