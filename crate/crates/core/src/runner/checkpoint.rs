//! Binary training checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "DGRKCKPT"
//! version      u32      1
//! step         u64      optimizer steps completed
//! wall_time    f64      seconds of training so far
//! digest_len   u32, then that many UTF-8 bytes of the config digest
//! layers       u32
//! per layer    u32 fan_out, u32 fan_in
//! adam_t       u64
//! params       f64 × count   weights then bias, layer by layer
//! adam_m       f64 × count   same order
//! adam_v       f64 × count   same order
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Linear, MlpParams, Parameters};
use crate::optim::AdamState;

const MAGIC: &[u8; 8] = b"DGRKCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub wall_time: f64,
    pub digest: String,
    pub params: MlpParams,
    pub adam: AdamState<MlpParams>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 24 * self.params.num_values());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.wall_time.to_le_bytes());
        out.extend_from_slice(&(self.digest.len() as u32).to_le_bytes());
        out.extend_from_slice(self.digest.as_bytes());
        out.extend_from_slice(&(self.params.depth() as u32).to_le_bytes());
        for l in self.params.layers() {
            out.extend_from_slice(&(l.fan_out() as u32).to_le_bytes());
            out.extend_from_slice(&(l.fan_in() as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.adam.steps().to_le_bytes());
        for p in [
            &self.params,
            self.adam.first_moment(),
            self.adam.second_moment(),
        ] {
            for t in p.tensors() {
                for x in t {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Parse("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let step = r.u64()?;
        let wall_time = r.f64()?;
        let digest_len = r.u32()? as usize;
        let digest = String::from_utf8(r.take(digest_len)?.to_vec())
            .map_err(|_| Error::Parse("digest is not UTF-8".into()))?;
        let n_layers = r.u32()? as usize;
        let shapes = (0..n_layers)
            .map(|_| Ok((r.u32()? as usize, r.u32()? as usize)))
            .collect::<Result<Vec<_>>>()?;
        let adam_t = r.u64()?;
        let mut read_params = || -> Result<MlpParams> {
            let layers = shapes
                .iter()
                .map(|&(out, inp)| {
                    let w = r.f64s(out * inp)?;
                    let b = r.f64s(out)?;
                    Ok(Linear {
                        weight: Matrix::from_vec(out, inp, w)?,
                        bias: b,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            MlpParams::from_layers(layers)
        };
        let params = read_params()?;
        let m = read_params()?;
        let v = read_params()?;
        if r.pos != bytes.len() {
            return Err(Error::Parse("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint {
            step,
            wall_time,
            digest,
            params,
            adam: AdamState::from_parts(m, v, adam_t)?,
        })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(Error::Length {
            expected: self.pos.saturating_add(n),
            found: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or(Error::Parse("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
