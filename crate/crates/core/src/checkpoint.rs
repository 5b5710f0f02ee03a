//! `SFCK` checkpoints: model hyperparameters, every named parameter with its
//! Adam moments, and the optimizer settings.
//!
//! Layout, little-endian: magic, u32 version, ten u32 hyperparameters
//! (D, L, N_h, MLP width, T_s, p_s, T_f, conv channels, residual blocks, k),
//! u8 preset code, u64 iteration, four f64 Adam settings, u32 parameter
//! count, then per parameter: u32 name length, UTF-8 name, u32 rank, u32
//! extents, u64 step count, and f64 value, first-moment and second-moment
//! payloads.

use std::fs;
use std::path::Path;

use sf_diffcore::{Adam, Tensor};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SizePreset, SurfaceFormer};

const MAGIC: &[u8; 4] = b"SFCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: SurfaceFormer,
    pub adam: Adam,
    pub iteration: u64,
}

pub fn encode_checkpoint(model: &SurfaceFormer, adam: &Adam, iteration: u64) -> Vec<u8> {
    let c = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        c.d_model,
        c.layers,
        c.heads,
        c.mlp_width,
        c.t_s,
        c.p_s,
        c.t_f,
        c.conv_channels,
        c.res_blocks,
        c.knn_k,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(match c.size_preset {
        None => 0,
        Some(SizePreset::Small) => 1,
        Some(SizePreset::Middle) => 2,
        Some(SizePreset::Large) => 3,
    });
    out.extend_from_slice(&iteration.to_le_bytes());
    for v in [adam.lr, adam.beta1, adam.beta2, adam.eps] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let store = model.store();
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &e in p.value.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        out.extend_from_slice(&p.step_count.to_le_bytes());
        for &x in p.value.data().iter().chain(&p.adam_m).chain(&p.adam_v) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::CheckpointFormat("truncated file".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::CheckpointFormat("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes };
    if r.take(4)? != MAGIC {
        return Err(Error::CheckpointFormat("missing SFCK magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CheckpointFormat(format!("unsupported version {version}")));
    }
    let mut h = [0usize; 10];
    for v in &mut h {
        *v = r.u32()? as usize;
    }
    let size_preset = match r.u8()? {
        0 => None,
        1 => Some(SizePreset::Small),
        2 => Some(SizePreset::Middle),
        3 => Some(SizePreset::Large),
        other => return Err(Error::CheckpointFormat(format!("unknown preset code {other}"))),
    };
    let config = ModelConfig {
        d_model: h[0],
        layers: h[1],
        heads: h[2],
        mlp_width: h[3],
        t_s: h[4],
        p_s: h[5],
        t_f: h[6],
        conv_channels: h[7],
        res_blocks: h[8],
        knn_k: h[9],
        size_preset,
    };
    let iteration = r.u64()?;
    let a = r.f64s(4)?;
    let adam = Adam {
        lr: a[0],
        beta1: a[1],
        beta2: a[2],
        eps: a[3],
    };

    let mut model = SurfaceFormer::new(config, 0).map_err(|e| Error::CheckpointFormat(e.to_string()))?;
    let count = r.u32()? as usize;
    if count != model.store().len() {
        return Err(Error::CheckpointFormat(format!(
            "{count} parameters stored, configuration defines {}",
            model.store().len()
        )));
    }
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::CheckpointFormat("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|e| e as usize)).collect::<Result<_>>()?;
        let step_count = r.u64()?;
        let id = model
            .store()
            .find(&name)
            .ok_or_else(|| Error::CheckpointFormat(format!("unexpected parameter `{name}`")))?;
        let p = model.store_mut().get_mut(id);
        if p.value.shape() != shape.as_slice() {
            return Err(Error::CheckpointFormat(format!(
                "parameter `{name}` has shape {shape:?}, expected {:?}",
                p.value.shape()
            )));
        }
        let n = p.value.len();
        p.value = Tensor::new(&shape, r.f64s(n)?).map_err(|e| Error::CheckpointFormat(e.to_string()))?;
        p.adam_m = r.f64s(n)?;
        p.adam_v = r.f64s(n)?;
        p.step_count = step_count;
    }
    if !r.buf.is_empty() {
        return Err(Error::CheckpointFormat("trailing bytes".into()));
    }
    Ok(Checkpoint { model, adam, iteration })
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &SurfaceFormer, adam: &Adam, iteration: u64) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model, adam, iteration)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
