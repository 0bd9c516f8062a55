use std::path::Path;

use super::model::{Model, ModelConfig, N_TASKS};
use super::tensor::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TSM1";
pub const CHECKPOINT_VERSION: u8 = 1;
/// Gating mode recorded in the header: one gate per task.
pub const GATING_PER_TASK: u8 = 1;

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Format("checkpoint is truncated".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

impl Model {
    /// Magic, version, architecture header, parameter count, f32 parameters
    /// in declaration order, CRC32 of everything before it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(64 + 4 * self.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        for v in [c.layers, c.input_dim, c.hidden_dim, c.experts, c.expert_hidden, c.expert_out, N_TASKS] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(GATING_PER_TASK);
        out.extend_from_slice(&(self.param_count() as u32).to_le_bytes());
        for p in &self.params {
            for &v in &p.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a TSM1 checkpoint".into()));
        }
        if bytes.len() < 9 {
            return Err(Error::Format("checkpoint is truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
        if crc32fast::hash(body) != stored {
            return Err(Error::Format("checkpoint CRC mismatch".into()));
        }
        let mut cur = Cursor { bytes: body, at: 4 };
        let version = cur.u8()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut h = [0usize; 7];
        for v in h.iter_mut() {
            *v = cur.u32()? as usize;
        }
        let [layers, input_dim, hidden_dim, experts, expert_hidden, expert_out, tasks] = h;
        if tasks != N_TASKS || cur.u8()? != GATING_PER_TASK {
            return Err(Error::Format("unsupported task or gating layout".into()));
        }
        let config = ModelConfig { input_dim, hidden_dim, layers, experts, expert_hidden, expert_out };
        config.validate()?;
        let count = cur.u32()? as usize;
        let shapes = config.param_shapes();
        if shapes.iter().map(|(r, c)| r * c).sum::<usize>() != count {
            return Err(Error::Format("parameter count does not match the architecture".into()));
        }
        let mut params = Vec::with_capacity(shapes.len());
        for (r, c) in shapes {
            let raw = cur.take(4 * r * c)?;
            let data =
                raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
            params.push(Tensor::matrix(r, c, data)?);
        }
        if cur.at != body.len() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        Ok(Model { config, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Rounds parameters to checkpoint precision.
    pub fn quantized(&self) -> Self {
        let mut m = self.clone();
        for p in &mut m.params {
            for v in &mut p.data {
                *v = *v as f32 as f64;
            }
            p.grad = None;
        }
        m
    }
}
