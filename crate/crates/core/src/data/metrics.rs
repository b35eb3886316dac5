use super::Image;
use crate::error::{Error, Result};

fn check(a: &Image, b: &Image) -> Result<()> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(Error::InvalidArgument(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

/// Root-mean-square pixel difference on the 0..255 scale.
pub fn rmse(a: &Image, b: &Image) -> Result<f64> {
    check(a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok((sum / a.data.len() as f64).sqrt())
}

/// `20·log10(255 / rmse)` in dB; identical images give `+∞`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let e = rmse(a, b)?;
    Ok(if e == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (255.0 / e).log10()
    })
}
