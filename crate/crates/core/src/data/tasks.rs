//! Paired-task construction: the condition `y` is a deterministic function
//! of the target `w`, lifted back to `w`'s shape.

use std::fmt;
use std::str::FromStr;

use super::Image;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    /// ×4 box downsampling followed by bicubic upsampling.
    SuperResolution,
    /// Rec.601 luminance replicated to every channel.
    Colorize,
    /// Central square covering a quarter of the area set to zero.
    Inpaint,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::SuperResolution => "sr4x",
            Task::Colorize => "colorize",
            Task::Inpaint => "inpaint25",
        }
    }

    pub fn make_condition(self, w: &Image) -> Result<Image> {
        match self {
            Task::SuperResolution => make_sr_condition(w, 4),
            Task::Colorize => Ok(make_color_condition(w)),
            Task::Inpaint => make_inpaint_condition(w, 0.25),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sr4x" => Ok(Task::SuperResolution),
            "colorize" => Ok(Task::Colorize),
            "inpaint25" => Ok(Task::Inpaint),
            _ => Err(Error::InvalidArgument(format!(
                "unknown task {s:?} (expected sr4x, colorize or inpaint25)"
            ))),
        }
    }
}

/// Mean over `factor × factor` blocks, rounded.
pub fn box_downsample(w: &Image, factor: usize) -> Result<Image> {
    if factor == 0 || !w.width.is_multiple_of(factor) || !w.height.is_multiple_of(factor) {
        return Err(Error::InvalidArgument(format!(
            "{}x{} image is not divisible by {factor}",
            w.width, w.height
        )));
    }
    let (ow, oh) = (w.width / factor, w.height / factor);
    let mut out = Image::filled(ow, oh, w.channels, 0);
    let n = (factor * factor) as f64;
    for y in 0..oh {
        for x in 0..ow {
            for c in 0..w.channels {
                let mut s = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        s += w.get(x * factor + dx, y * factor + dy, c) as f64;
                    }
                }
                out.set(x, y, c, (s / n).round() as u8);
            }
        }
    }
    Ok(out)
}

/// Keys cubic convolution kernel with `a = −0.5`.
fn cubic(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t.powi(3) - (a + 3.0) * t.powi(2) + 1.0
    } else if t < 2.0 {
        a * t.powi(3) - 5.0 * a * t.powi(2) + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Bicubic upsampling by an integer factor (pixel-centre aligned, edges
/// replicated).
pub fn bicubic_upsample(img: &Image, factor: usize) -> Image {
    let (ow, oh) = (img.width * factor, img.height * factor);
    let mut out = Image::filled(ow, oh, img.channels, 0);
    let taps = |o: usize, n: usize| -> [(usize, f64); 4] {
        let src = (o as f64 + 0.5) / factor as f64 - 0.5;
        let base = src.floor();
        let frac = src - base;
        std::array::from_fn(|k| {
            let i = (base as isize + k as isize - 1).clamp(0, n as isize - 1) as usize;
            (i, cubic(frac - (k as f64 - 1.0)))
        })
    };
    for y in 0..oh {
        let ty = taps(y, img.height);
        for x in 0..ow {
            let tx = taps(x, img.width);
            for c in 0..img.channels {
                let mut s = 0.0;
                for &(sy, wy) in &ty {
                    for &(sx, wx) in &tx {
                        s += wy * wx * img.get(sx, sy, c) as f64;
                    }
                }
                out.set(x, y, c, s.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

pub fn make_sr_condition(w: &Image, factor: usize) -> Result<Image> {
    Ok(bicubic_upsample(&box_downsample(w, factor)?, factor))
}

/// Rec.601 luma `0.299 R + 0.587 G + 0.114 B`, rounded, in every channel.
pub fn make_color_condition(w: &Image) -> Image {
    if w.channels == 1 {
        return w.clone();
    }
    let mut out = w.clone();
    for px in out.data.chunks_exact_mut(3) {
        let l = (0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64).round() as u8;
        px.fill(l);
    }
    out
}

/// Zeroes a centred square of side `⌈√coverage · H⌉`.
pub fn make_inpaint_condition(w: &Image, coverage: f64) -> Result<Image> {
    if w.width != w.height {
        return Err(Error::InvalidArgument(
            "inpainting needs a square image".into(),
        ));
    }
    if !(0.0..=1.0).contains(&coverage) {
        return Err(Error::InvalidArgument(format!(
            "coverage {coverage} outside [0, 1]"
        )));
    }
    let side = ((coverage.sqrt() * w.height as f64) - 1e-9).ceil().max(0.0) as usize;
    let off = (w.height - side) / 2;
    let mut out = w.clone();
    for y in off..off + side {
        for x in off..off + side {
            for c in 0..w.channels {
                out.set(x, y, c, 0);
            }
        }
    }
    Ok(out)
}
