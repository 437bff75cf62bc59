//! Trajectory file.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic      8 bytes  "GNSTRAJ\0"
//! version    u32
//! dim        u32
//! particles  u32      N
//! frames     u32      K (at least 2)
//! dt         f64      physical seconds per frame
//! globals    u32      G
//! name_len   u16, name utf-8
//! materials  N × u8
//! globals    K × G × f32
//! checksum   u32      CRC-32 of every header byte above
//! payload    K × N × dim × f32 positions
//! ```

use std::path::Path;

use crate::error::{GnsError, Result};
use crate::features::{Material, ParticleState};

pub const TRAJECTORY_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"GNSTRAJ\0";

/// A ground-truth (or simulated) particle trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub name: String,
    pub dim: usize,
    pub dt: f64,
    pub materials: Vec<Material>,
    /// Global features per frame.
    pub globals: Vec<Vec<f64>>,
    /// `K` frames of `N × dim` positions.
    pub frames: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_particles(&self) -> usize {
        self.materials.len()
    }

    pub fn num_globals(&self) -> usize {
        self.globals.first().map_or(0, |g| g.len())
    }

    /// Number of `(window, next frame)` training pairs for context `c`.
    pub fn num_pairs(&self, c: usize) -> usize {
        self.frames.len().saturating_sub(c + 1)
    }

    /// Window of frames `t - c ..= t` with the globals of frame `t`.
    pub fn window(&self, t: usize, c: usize) -> Result<ParticleState> {
        if t < c || t >= self.frames.len() {
            return Err(GnsError::Index {
                op: "trajectory window",
                index: t,
                len: self.frames.len(),
            });
        }
        ParticleState::new(
            self.dim,
            self.frames[t - c..=t].to_vec(),
            self.materials.clone(),
            self.globals[t].clone(),
        )
    }

    /// Positions rounded to `f32`, as stored on disk.
    pub fn round_to_f32(&mut self) {
        for v in self.frames.iter_mut().flatten().chain(self.globals.iter_mut().flatten()) {
            *v = *v as f32 as f64;
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_particles();
        if self.frames.len() < 2 {
            return Err(GnsError::Data(format!(
                "trajectory {} needs at least 2 frames, has {}",
                self.name,
                self.frames.len()
            )));
        }
        if self.globals.len() != self.frames.len() {
            return Err(GnsError::Data("one global vector per frame required".into()));
        }
        let g = self.num_globals();
        if self.globals.iter().any(|v| v.len() != g) || self.frames.iter().any(|f| f.len() != n * self.dim) {
            return Err(GnsError::Data(format!("ragged trajectory {}", self.name)));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let n = self.num_particles();
        let g = self.num_globals();
        let mut buf = Vec::with_capacity(64 + n + self.frames.len() * (g + n * self.dim) * 4);
        buf.extend_from_slice(MAGIC);
        for v in [TRAJECTORY_VERSION, self.dim as u32, n as u32, self.frames.len() as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&self.dt.to_le_bytes());
        buf.extend_from_slice(&(g as u32).to_le_bytes());
        buf.extend_from_slice(&(self.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(self.name.as_bytes());
        buf.extend(self.materials.iter().map(|m| m.id()));
        for v in self.globals.iter().flatten() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        for v in self.frames.iter().flatten() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        Ok(buf)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| GnsError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| GnsError::io(path, e))?;
        Trajectory::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(GnsError::Format {
                offset: 0,
                message: "bad trajectory magic".into(),
            });
        }
        let version = r.u32()?;
        if version != TRAJECTORY_VERSION {
            return Err(GnsError::Format {
                offset: 8,
                message: format!("unsupported trajectory version {version}"),
            });
        }
        let dim = r.u32()? as usize;
        let n = r.u32()? as usize;
        let k_offset = r.pos as u64;
        let k = r.u32()? as usize;
        if !matches!(dim, 2 | 3) {
            return Err(GnsError::Format {
                offset: 12,
                message: format!("dimension must be 2 or 3, got {dim}"),
            });
        }
        if k < 2 {
            return Err(GnsError::Format {
                offset: k_offset,
                message: format!("trajectory needs at least 2 frames, header says {k}"),
            });
        }
        let dt = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let g = r.u32()? as usize;
        let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name_offset = r.pos as u64;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| GnsError::Format {
                offset: name_offset,
                message: "trajectory name is not utf-8".into(),
            })?
            .to_string();
        let mat_offset = r.pos;
        let materials = r
            .take(n)?
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                Material::from_id(id).map_err(|_| GnsError::Format {
                    offset: (mat_offset + i) as u64,
                    message: format!("unknown material id {id} for particle {i}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let globals_flat = r.f32s(k * g)?;
        let header_end = r.pos;
        let stored = r.u32()?;
        let computed = crc32fast::hash(&bytes[..header_end]);
        if stored != computed {
            return Err(GnsError::Format {
                offset: header_end as u64,
                message: format!("header checksum mismatch: stored {stored:08x}, computed {computed:08x}"),
            });
        }
        let expected = r.pos + k * n * dim * 4;
        if bytes.len() != expected {
            return Err(GnsError::Format {
                offset: r.pos as u64,
                message: format!("payload length mismatch: expected {expected} bytes in total, file has {}", bytes.len()),
            });
        }
        let flat = r.f32s(k * n * dim)?;
        let frames = if n * dim == 0 {
            vec![Vec::new(); k]
        } else {
            flat.chunks_exact(n * dim).map(|c| c.to_vec()).collect()
        };
        let globals = if g == 0 {
            vec![Vec::new(); k]
        } else {
            globals_flat.chunks_exact(g).map(|c| c.to_vec()).collect()
        };
        Ok(Trajectory {
            name,
            dim,
            dt,
            materials,
            globals,
            frames,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(GnsError::Format {
                offset: self.pos as u64,
                message: format!(
                    "truncated trajectory: expected at least {} bytes, file has {}",
                    self.pos + n,
                    self.bytes.len()
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(count * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}
