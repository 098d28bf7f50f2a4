//! Binary checkpoint layout (all integers u32 LE, all reals f32 LE):
//!
//! | offset      | content                                                   |
//! |-------------|-----------------------------------------------------------|
//! | 0           | magic `SATSURF\0` (8 bytes)                               |
//! | 8           | format version (= 1)                                      |
//! | 12          | config echo: levels, base_resolution, max_resolution,     |
//! |             | table_log2, feature_dim, hidden_width, geo_feature_dim,   |
//! |             | position_bands, direction_bands (9 values)                |
//! | 48          | iteration                                                 |
//! | 52          | parameter count `n`                                       |
//! | 56          | optimizer group count `g`                                 |
//! | 60          | `g` optimizer step counters                               |
//! | 60 + 4g     | `n` parameters (tables, SDF MLP, color MLP, log s)        |
//! | 60 + 4g + 4n  | `n` first moments                                       |
//! | 60 + 4g + 8n  | `n` second moments                                      |

use std::path::Path;

use crate::error::{Error, Result};
use crate::field::Field;

pub const MAGIC: &[u8; 8] = b"SATSURF\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u32,
    pub params: Vec<f64>,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub steps: Vec<u32>,
}

fn config_echo(field: &Field) -> [u32; 9] {
    let g = &field.grid.config;
    let c = &field.config;
    [
        g.levels as u32,
        g.base_resolution,
        g.max_resolution,
        g.table_log2,
        g.feature_dim as u32,
        c.hidden_width as u32,
        c.geo_feature_dim as u32,
        c.position_bands as u32,
        c.direction_bands as u32,
    ]
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn reals(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self, field: &Field) -> Vec<u8> {
        let n = self.params.len();
        let mut out = Vec::with_capacity(60 + 4 * self.steps.len() + 12 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in config_echo(field) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(self.steps.len() as u32).to_le_bytes());
        for s in &self.steps {
            out.extend_from_slice(&s.to_le_bytes());
        }
        for arr in [&self.params, &self.first_moment, &self.second_moment] {
            for v in arr.iter() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(field: &Field, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let expected = config_echo(field);
        for (i, want) in expected.iter().enumerate() {
            let got = r.u32()?;
            if got != *want {
                return Err(Error::Checkpoint(format!(
                    "config mismatch at echo field {i}: file has {got}, config has {want}"
                )));
            }
        }
        let iteration = r.u32()?;
        let n = r.u32()? as usize;
        if n != field.param_count() {
            return Err(Error::Checkpoint(format!(
                "parameter count {n} does not match config ({})",
                field.param_count()
            )));
        }
        let g = r.u32()? as usize;
        let steps = (0..g).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let params = r.reals(n)?;
        let first_moment = r.reals(n)?;
        let second_moment = r.reals(n)?;
        if r.at != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            iteration,
            params,
            first_moment,
            second_moment,
            steps,
        })
    }

    pub fn write(&self, field: &Field, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes(field)).map_err(|e| Error::io(path, e))
    }

    pub fn read(field: &Field, path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(field, &bytes)
    }
}
