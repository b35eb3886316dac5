//! 8-bit rasters and binary PPM/PGM (P6/P5, maxval 255) IO.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Interleaved 8-bit image, row-major, `channels` ∈ {1, 3}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Format(format!(
                "unsupported channel count {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Format(format!(
                "{}x{}x{} image needs {} bytes, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// One of the eight square symmetries: bit 0 mirrors horizontally, bit 1
    /// vertically, bit 2 transposes (applied first). Square images only
    /// when bit 2 is set.
    pub fn dihedral(&self, k: u8) -> Result<Self> {
        let transpose = k & 4 != 0;
        if transpose && self.width != self.height {
            return Err(Error::InvalidArgument(
                "transpose needs a square image".into(),
            ));
        }
        let (w, h) = (self.width, self.height);
        let mut out = Self::filled(w, h, self.channels, 0);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = if transpose { (y, x) } else { (x, y) };
                let sx = if k & 1 != 0 { w - 1 - sx } else { sx };
                let sy = if k & 2 != 0 { h - 1 - sy } else { sy };
                for c in 0..self.channels {
                    out.set(x, y, c, self.get(sx, sy, c));
                }
            }
        }
        Ok(out)
    }

    /// `(1, C, H, W)` tensor of pixel values `0..=255`.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::from_fn(
            [1, self.channels, self.height, self.width],
            |[_, c, y, x]| T::of(self.get(x, y, c) as f64),
        )
    }

    /// Image from batch item `index` of a tensor of pixel values, rounded and
    /// clamped to `0..=255`.
    pub fn from_tensor<T: Element>(t: &Tensor<T>, index: usize) -> Result<Self> {
        let [b, c, h, w] = t.shape();
        if index >= b {
            return Err(Error::InvalidArgument(format!(
                "batch index {index} out of {b}"
            )));
        }
        let mut img = Image::new(w, h, c, vec![0; w * h * c])?;
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = t.at([index, ch, y, x]).f64().round().clamp(0.0, 255.0);
                    img.set(x, y, ch, v as u8);
                }
            }
        }
        Ok(img)
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let channels = match bytes.get(..2) {
            Some(b"P6") => 3,
            Some(b"P5") => 1,
            _ => {
                return Err(Error::Format(
                    "expected binary PPM (P6) or PGM (P5) magic".into(),
                ))
            }
        };
        let mut pos = 2;
        let mut fields = [0usize; 3];
        for f in &mut fields {
            // Whitespace and comments may precede every header field.
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n' && b != b'\r') {
                            pos += 1;
                        }
                    }
                    Some(_) => break,
                    None => return Err(Error::Format("truncated header".into())),
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("malformed header field".into()));
            }
            *f = std::str::from_utf8(&bytes[start..pos])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format("header field out of range".into()))?;
        }
        let [width, height, maxval] = fields;
        if maxval != 255 {
            return Err(Error::Format(format!(
                "only maxval 255 is supported, got {maxval}"
            )));
        }
        if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
            return Err(Error::Format("missing whitespace after header".into()));
        }
        pos += 1;
        let n = width * height * channels;
        let data = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::Format("truncated pixel data".into()))?;
        Image::new(width, height, channels, data.to_vec())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_ppm(&std::fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_ppm())?;
        Ok(())
    }

    /// Row-major grid of equally sized images with `pad` black pixels
    /// between cells.
    pub fn grid(rows: &[Vec<Image>], pad: usize) -> Result<Self> {
        let first = rows
            .iter()
            .flatten()
            .next()
            .ok_or_else(|| Error::InvalidArgument("empty grid".into()))?;
        let (w, h, c) = (first.width, first.height, first.channels);
        if rows
            .iter()
            .flatten()
            .any(|i| i.width != w || i.height != h || i.channels != c)
        {
            return Err(Error::InvalidArgument("grid cells differ in shape".into()));
        }
        let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
        let gw = cols * w + (cols + 1) * pad;
        let gh = rows.len() * h + (rows.len() + 1) * pad;
        let mut out = Image::filled(gw, gh, c, 0);
        for (r, row) in rows.iter().enumerate() {
            for (k, img) in row.iter().enumerate() {
                let (ox, oy) = (pad + k * (w + pad), pad + r * (h + pad));
                for y in 0..h {
                    for x in 0..w {
                        for ch in 0..c {
                            out.set(ox + x, oy + y, ch, img.get(x, y, ch));
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}
