//! Procedural images: a two-colour linear gradient with a few filled
//! rectangles and discs on top. Colours come from a jittered palette.

use super::Image;
use crate::tensor::Rng;

/// Base colours; every drawn colour is one of these plus a small jitter.
const PALETTE: [[f64; 3]; 8] = [
    [200.0, 60.0, 50.0],
    [60.0, 160.0, 70.0],
    [50.0, 90.0, 190.0],
    [220.0, 200.0, 80.0],
    [140.0, 80.0, 160.0],
    [70.0, 180.0, 190.0],
    [230.0, 230.0, 220.0],
    [40.0, 40.0, 50.0],
];

fn color(rng: &mut Rng, channels: usize) -> [f64; 3] {
    let base = PALETTE[rng.below(PALETTE.len())];
    let mut c = [0.0; 3];
    for (k, v) in c.iter_mut().enumerate().take(channels) {
        *v = (base[k] + 40.0 * (rng.uniform() - 0.5)).clamp(0.0, 255.0);
    }
    c
}

pub fn synthetic_image(rng: &mut Rng, size: usize, channels: usize) -> Image {
    let mut img = Image::filled(size, size, channels, 0);
    let (a, b) = (color(rng, channels), color(rng, channels));
    let angle = rng.uniform() * std::f64::consts::TAU;
    let (dx, dy) = (angle.cos(), angle.sin());
    let s = size as f64;
    for y in 0..size {
        for x in 0..size {
            // Projection onto the gradient direction, mapped to [0, 1].
            let p = ((x as f64 / s - 0.5) * dx + (y as f64 / s - 0.5) * dy)
                / std::f64::consts::SQRT_2
                + 0.5;
            for c in 0..channels {
                img.set(
                    x,
                    y,
                    c,
                    (a[c] + (b[c] - a[c]) * p).round().clamp(0.0, 255.0) as u8,
                );
            }
        }
    }
    let shapes = 1 + rng.below(3);
    for _ in 0..shapes {
        let col = color(rng, channels);
        let cx = rng.uniform() * s;
        let cy = rng.uniform() * s;
        let r = (0.15 + 0.25 * rng.uniform()) * s;
        let disc = rng.uniform() < 0.5;
        for y in 0..size {
            for x in 0..size {
                let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let inside = if disc {
                    px * px + py * py <= r * r
                } else {
                    px.abs() <= r && py.abs() <= r * 0.7
                };
                if inside {
                    for c in 0..channels {
                        img.set(x, y, c, col[c].round() as u8);
                    }
                }
            }
        }
    }
    img
}

/// `count` images from `seed`; image `k` depends only on `(seed, k)`.
pub fn synthetic_set(count: usize, size: usize, channels: usize, seed: u64) -> Vec<Image> {
    (0..count)
        .map(|k| synthetic_image(&mut Rng::with_stream(seed, k as u64), size, channels))
        .collect()
}
