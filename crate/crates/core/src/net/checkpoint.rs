//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "KALEIDO\0"
//! version      u32      1
//! n_config     u32      number of u64 config fields that follow (14)
//! config       u64 × n  layers, hidden, q_heads, kv_heads, window, patch,
//!                       channels, registers, grid_h, grid_w, ffn_hidden,
//!                       aux_dim, time_freq_dim, value_transform (0/1)
//! step         u64      optimiser steps taken
//! n_blobs      u32
//! blob × n_blobs:
//!   name_len   u32, name (UTF-8)
//!   rows u32, cols u32
//!   data       f32 × rows·cols
//! ```
//!
//! Parameter blobs use the names of [`ParamLayout`]; optimiser moments are
//! stored as `adam.m/<name>` and `adam.v/<name>`.

use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamLayout;
use super::ModelConfig;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"KALEIDO\0";
pub const VERSION: u32 = 1;
const CONFIG_FIELDS: u32 = 14;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub params: Vec<f32>,
    /// AdamW first and second moments, when saved by the trainer.
    pub moments: Option<(Vec<f32>, Vec<f32>)>,
}

fn config_fields(c: &ModelConfig) -> [u64; CONFIG_FIELDS as usize] {
    [
        c.layers,
        c.hidden,
        c.q_heads,
        c.kv_heads,
        c.window,
        c.patch,
        c.channels,
        c.registers,
        c.grid_h,
        c.grid_w,
        c.ffn_hidden,
        c.aux_dim,
        c.time_freq_dim,
        c.value_transform as usize,
    ]
    .map(|x| x as u64)
}

fn config_from(f: &[u64]) -> Result<ModelConfig> {
    let u = |i: usize| {
        usize::try_from(f[i]).map_err(|_| Error::Checkpoint(format!("config field {i} does not fit in usize")))
    };
    let cfg = ModelConfig {
        layers: u(0)?,
        hidden: u(1)?,
        q_heads: u(2)?,
        kv_heads: u(3)?,
        window: u(4)?,
        patch: u(5)?,
        channels: u(6)?,
        registers: u(7)?,
        grid_h: u(8)?,
        grid_w: u(9)?,
        ffn_hidden: u(10)?,
        aux_dim: u(11)?,
        time_freq_dim: u(12)?,
        value_transform: match f[13] {
            0 => false,
            1 => true,
            x => return Err(Error::Checkpoint(format!("bad value_transform flag {x}"))),
        },
    };
    cfg.validate().map_err(|e| Error::Checkpoint(format!("stored config invalid: {e}")))?;
    Ok(cfg)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let layout = ParamLayout::new(&self.config);
        if self.params.len() != layout.total {
            return Err(Error::Checkpoint(format!(
                "{} parameters do not match the {} of the config",
                self.params.len(),
                layout.total
            )));
        }
        let mut buf = Vec::with_capacity(64 + 12 * self.params.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&CONFIG_FIELDS.to_le_bytes());
        for f in config_fields(&self.config) {
            buf.extend_from_slice(&f.to_le_bytes());
        }
        buf.extend_from_slice(&self.step.to_le_bytes());
        let mut sections: Vec<(&str, &[f32])> = vec![("", &self.params)];
        if let Some((m, v)) = &self.moments {
            if m.len() != layout.total || v.len() != layout.total {
                return Err(Error::Checkpoint("optimiser moment size mismatch".into()));
            }
            sections.push(("adam.m/", m));
            sections.push(("adam.v/", v));
        }
        let n_blobs = (layout.entries.len() * sections.len()) as u32;
        buf.extend_from_slice(&n_blobs.to_le_bytes());
        for (prefix, data) in sections {
            for e in &layout.entries {
                let name = format!("{prefix}{}", e.name);
                buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
                buf.extend_from_slice(name.as_bytes());
                buf.extend_from_slice(&(e.slot.rows as u32).to_le_bytes());
                buf.extend_from_slice(&(e.slot.cols as u32).to_le_bytes());
                for x in &data[e.slot.range()] {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a kaleido checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let n = r.u32()?;
        if n != CONFIG_FIELDS {
            return Err(Error::Checkpoint(format!("expected {CONFIG_FIELDS} config fields, found {n}")));
        }
        let fields = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let config = config_from(&fields)?;
        let step = r.u64()?;
        let layout = ParamLayout::new(&config);
        let n_blobs = r.u32()? as usize;
        let mut params = vec![0f32; layout.total];
        let mut m = vec![0f32; layout.total];
        let mut v = vec![0f32; layout.total];
        let (mut seen_p, mut seen_m, mut seen_v) = (0usize, 0usize, 0usize);
        for _ in 0..n_blobs {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("blob name is not UTF-8".into()))?
                .to_string();
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            let (dst, base, seen) = if let Some(b) = name.strip_prefix("adam.m/") {
                (&mut m, b, &mut seen_m)
            } else if let Some(b) = name.strip_prefix("adam.v/") {
                (&mut v, b, &mut seen_v)
            } else {
                (&mut params, name.as_str(), &mut seen_p)
            };
            let entry = layout
                .find(base)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name:?}")))?;
            if (entry.slot.rows, entry.slot.cols) != (rows, cols) {
                return Err(Error::Checkpoint(format!(
                    "{name}: stored shape {rows}×{cols}, model expects {}×{}",
                    entry.slot.rows, entry.slot.cols
                )));
            }
            let raw = r.take(rows * cols * 4)?;
            for (x, c) in dst[entry.slot.range()].iter_mut().zip(raw.chunks_exact(4)) {
                *x = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            }
            *seen += 1;
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last blob".into()));
        }
        let entries = layout.entries.len();
        if seen_p != entries {
            return Err(Error::Checkpoint(format!("{seen_p} of {entries} parameter blobs present")));
        }
        let moments = match (seen_m, seen_v) {
            (0, 0) => None,
            (a, b) if a == entries && b == entries => Some((m, v)),
            _ => return Err(Error::Checkpoint("incomplete optimiser moments".into())),
        };
        Ok(Self {
            config,
            step,
            params,
            moments,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}
