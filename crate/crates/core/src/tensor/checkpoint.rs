//! Parameter checkpoint file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "GNSCKPT\0"
//! version  u32
//! count    u32      number of manifest entries
//! manifest count × { name_len u16, name utf-8, ndim u8, dims u32×ndim, numel u64 }
//! payload  numel × f32 per entry, in manifest order
//! ```
//!
//! Optimizer state rides along under reserved names: `__adam/m/<param>`,
//! `__adam/v/<param>` and `__adam/step`, the latter a two-element tensor
//! holding the step counter split into high and low 24-bit halves so both
//! are exact in `f32`.

use std::io::{Read, Write};
use std::path::Path;

use super::{AdamConfig, AdamState, ParamStore, Tensor};
use crate::error::{GnsError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"GNSCKPT\0";
const ADAM_M: &str = "__adam/m/";
const ADAM_V: &str = "__adam/v/";
const ADAM_STEP: &str = "__adam/step";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub adam: Option<AdamState>,
}

pub fn write_checkpoint(path: &Path, params: &ParamStore, adam: Option<&AdamState>) -> Result<()> {
    let mut entries: Vec<(String, &[usize], Vec<f64>)> = Vec::new();
    for (_, name, t) in params.iter() {
        if name.starts_with("__") {
            return Err(GnsError::Config(format!("parameter name {name} is reserved")));
        }
        entries.push((name.to_string(), t.shape(), t.data().to_vec()));
    }
    const STEP_SHAPE: [usize; 1] = [2];
    if let Some(state) = adam {
        for ((_, name, _), m) in params.iter().zip(&state.m) {
            entries.push((format!("{ADAM_M}{name}"), m.shape(), m.data().to_vec()));
        }
        for ((_, name, _), v) in params.iter().zip(&state.v) {
            entries.push((format!("{ADAM_V}{name}"), v.shape(), v.data().to_vec()));
        }
        if state.step >= 1 << 48 {
            return Err(GnsError::Config("optimizer step counter too large".into()));
        }
        let hi = (state.step >> 24) as f64;
        let lo = (state.step & 0xFF_FFFF) as f64;
        entries.push((ADAM_STEP.to_string(), &STEP_SHAPE, vec![hi, lo]));
    }

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, shape, data) in &entries {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(shape.len() as u8);
        for &d in shape.iter() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
    }
    for (_, _, data) in &entries {
        for &v in data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| GnsError::io(path, e))?;
    f.write_all(&buf).map_err(|e| GnsError::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(GnsError::Format {
                offset: self.pos as u64,
                message: format!(
                    "truncated checkpoint reading {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(path: &Path, adam_config: AdamConfig) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| GnsError::io(path, e))?;
    parse_checkpoint(&bytes, adam_config)
}

fn parse_checkpoint(bytes: &[u8], adam_config: AdamConfig) -> Result<Checkpoint> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8, "magic")? != MAGIC {
        return Err(GnsError::Format {
            offset: 0,
            message: "bad checkpoint magic".into(),
        });
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(GnsError::Format {
            offset: 8,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let count = cur.u32("entry count")? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let at = cur.pos as u64;
        let name_len = cur.u16("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| GnsError::Format {
                offset: at,
                message: "parameter name is not utf-8".into(),
            })?
            .to_string();
        let ndim = cur.u8("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32("dim")? as usize);
        }
        let numel = cur.u64("numel")? as usize;
        if shape.iter().product::<usize>() != numel {
            return Err(GnsError::Format {
                offset: at,
                message: format!("entry {name}: shape {shape:?} disagrees with numel {numel}"),
            });
        }
        manifest.push((name, shape, numel));
    }
    let mut params = ParamStore::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    let mut step = None;
    for (name, shape, numel) in manifest {
        let raw = cur.take(numel * 4, &format!("payload of {name}"))?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let tensor = Tensor::new(shape, data)?;
        if name.starts_with(ADAM_M) {
            m.push(tensor);
        } else if name.starts_with(ADAM_V) {
            v.push(tensor);
        } else if name == ADAM_STEP {
            let d = tensor.data();
            step = Some(((d[0] as u64) << 24) | d[1] as u64);
        } else {
            params.insert(name, tensor);
        }
    }
    if cur.pos != bytes.len() {
        return Err(GnsError::Format {
            offset: cur.pos as u64,
            message: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    let adam = match step {
        Some(step) => {
            if m.len() != params.len() || v.len() != params.len() {
                return Err(GnsError::Format {
                    offset: 0,
                    message: "optimizer moments do not match parameters".into(),
                });
            }
            Some(AdamState {
                config: adam_config,
                step,
                m,
                v,
            })
        }
        None => None,
    };
    Ok(Checkpoint { params, adam })
}
