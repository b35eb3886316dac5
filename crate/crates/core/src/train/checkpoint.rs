//! Binary training-state container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CAFW" | version u16
//! config: u32 length, UTF-8 run configuration text
//! iteration u64 | optimizer steps u64 | flags u8 (bit 0: actnorm initialized)
//! rng: seed [u8; 32] | stream u64 | word position u128
//! 4 tensor sections (parameters, Adam m, Adam v, EMA shadow):
//!     u32 count, then per tensor: u16 name length, name, u8 trainable,
//!     shape 4 × u32, f32 payload
//! CRC32 (IEEE) of every preceding byte, u32
//! ```

use std::path::Path;

use super::{Adam, TrainState};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Rng, RngState, Tensor};

pub const MAGIC: &[u8; 4] = b"CAFW";
pub const VERSION: u16 = 1;

fn put_tensors(out: &mut Vec<u8>, store: &ParamStore<f32>) {
    out.extend((store.len() as u32).to_le_bytes());
    for e in store.entries() {
        let name = e.name.as_bytes();
        out.extend((name.len() as u16).to_le_bytes());
        out.extend(name);
        out.push(e.trainable as u8);
        for d in e.value.shape() {
            out.extend((d as u32).to_le_bytes());
        }
        for v in e.value.data() {
            out.extend(v.to_le_bytes());
        }
    }
}

pub fn encode(state: &TrainState, config_text: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend((config_text.len() as u32).to_le_bytes());
    out.extend(config_text.as_bytes());
    out.extend(state.iteration.to_le_bytes());
    out.extend(state.adam.steps.to_le_bytes());
    out.push(state.initialized as u8);
    let rng = state.rng.state();
    out.extend(rng.seed);
    out.extend(rng.stream.to_le_bytes());
    out.extend(rng.word_pos.to_le_bytes());
    put_tensors(&mut out, &state.params);
    put_tensors(&mut out, &as_store(&state.params, &state.adam.m));
    put_tensors(&mut out, &as_store(&state.params, &state.adam.v));
    put_tensors(&mut out, &state.ema);
    let crc = crc32fast::hash(&out);
    out.extend(crc.to_le_bytes());
    out
}

fn as_store(like: &ParamStore<f32>, tensors: &[Tensor<f32>]) -> ParamStore<f32> {
    let mut s = ParamStore::new();
    for (e, t) in like.entries().iter().zip(tensors) {
        s.add(e.name.clone(), t.clone(), e.trainable);
    }
    s
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn tensors(&mut self) -> Result<ParamStore<f32>> {
        let count = self.u32()?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = self.u16()? as usize;
            let name = std::str::from_utf8(self.take(len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let trainable = self.take(1)?[0] != 0;
            let mut shape = [0usize; 4];
            for d in &mut shape {
                *d = self.u32()? as usize;
            }
            let n: usize = shape.iter().product();
            let data = self
                .take(
                    n.checked_mul(4)
                        .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?,
                )?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            if store.find(&name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
            }
            store.add(name, Tensor::new(shape, data)?, trainable);
        }
        Ok(store)
    }
}

/// Parses a checkpoint, returning the state and the embedded configuration.
pub fn decode(bytes: &[u8]) -> Result<(TrainState, String)> {
    if bytes.len() < 10 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().expect("4 bytes")) {
        return Err(Error::Checkpoint(
            "checksum mismatch (corrupt or truncated file)".into(),
        ));
    }
    let len = r.u32()? as usize;
    let config = std::str::from_utf8(r.take(len)?)
        .map_err(|_| Error::Checkpoint("configuration is not UTF-8".into()))?
        .to_string();
    let iteration = r.u64()?;
    let steps = r.u64()?;
    let initialized = r.take(1)?[0] & 1 != 0;
    let rng = RngState {
        seed: r.array()?,
        stream: r.u64()?,
        word_pos: u128::from_le_bytes(r.array()?),
    };
    let params = r.tensors()?;
    let m = r.tensors()?;
    let v = r.tensors()?;
    let ema = r.tensors()?;
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    if !params.congruent(&m) || !params.congruent(&v) || !params.congruent(&ema) {
        return Err(Error::Checkpoint(
            "optimizer or EMA sections do not match parameters".into(),
        ));
    }
    let mut adam = Adam::new(&params);
    adam.steps = steps;
    adam.m = m.entries().iter().map(|e| e.value.clone()).collect();
    adam.v = v.entries().iter().map(|e| e.value.clone()).collect();
    Ok((
        TrainState {
            params,
            adam,
            ema,
            iteration,
            rng: Rng::from_state(rng),
            initialized,
        },
        config,
    ))
}

pub fn save(path: &Path, state: &TrainState, config_text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(state, config_text))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(TrainState, String)> {
    decode(&std::fs::read(path)?)
}
