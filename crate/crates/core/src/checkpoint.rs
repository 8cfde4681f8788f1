//! Binary checkpoint: magic `CFAA`, u32 format version, config snapshot,
//! named parameter blobs with shapes, and the Adam state. All integers and
//! floats are little-endian; floats are stored as f64 so a round trip is
//! bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{AdamConfig, AdamState, ModelParams};
use crate::ndmath::Matrix;

pub const MAGIC: &[u8; 4] = b"CFAA";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: AdamState,
    /// Resolved configuration the parameters were trained under.
    pub config: String,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn matrix(&mut self, m: &Matrix) {
        self.u32(m.rows() as u32);
        self.u32(m.cols() as u32);
        for &v in m.as_slice() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format(format!(
                "checkpoint truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("matrix shape overflows".into()))?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("matrix too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Matrix::new(rows, cols, data).map_err(|e| Error::Format(format!("bad matrix blob: {e}")))
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.str(&ckpt.config);
    let named = ckpt.params.named_tensors();
    w.u32(named.len() as u32);
    for (name, m) in &named {
        w.str(name);
        w.matrix(m);
    }
    let a = &ckpt.adam;
    w.u64(a.step);
    for v in [a.config.lr, a.config.beta1, a.config.beta2, a.config.eps] {
        w.f64(v);
    }
    for m in a.first.iter().chain(&a.second) {
        w.matrix(m);
    }
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let config = r.str()?;
    let count = r.u32()? as usize;
    let mut blobs = BTreeMap::new();
    for _ in 0..count {
        let name = r.str()?;
        let m = r.matrix()?;
        blobs.insert(name, m);
    }
    let params = assemble(blobs)?;
    let step = r.u64()?;
    let adam_config = AdamConfig {
        lr: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        eps: r.f64()?,
    };
    let shapes: Vec<(usize, usize)> = params.named_tensors().iter().map(|(_, m)| m.shape()).collect();
    let mut moments = Vec::with_capacity(2 * shapes.len());
    for i in 0..2 * shapes.len() {
        let m = r.matrix()?;
        if m.shape() != shapes[i % shapes.len()] {
            return Err(Error::Format("Adam moment shape does not match its parameter".into()));
        }
        moments.push(m);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    let second = moments.split_off(shapes.len());
    Ok(Checkpoint {
        params,
        adam: AdamState {
            config: adam_config,
            step,
            first: moments,
            second,
        },
        config,
    })
}

fn assemble(mut blobs: BTreeMap<String, Matrix>) -> Result<ModelParams> {
    // Start from a correctly shaped skeleton and fill by name.
    let mut take = |name: &str| {
        blobs
            .remove(name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))
    };
    let mut tower = |prefix: &str| -> Result<crate::model::TowerParams> {
        Ok(crate::model::TowerParams {
            id_table: take(&format!("{prefix}.id_table"))?,
            history_weight: take(&format!("{prefix}.history_weight"))?,
            history_bias: take(&format!("{prefix}.history_bias"))?,
            fuse1_weight: take(&format!("{prefix}.fuse1_weight"))?,
            fuse1_bias: take(&format!("{prefix}.fuse1_bias"))?,
            fuse2_weight: take(&format!("{prefix}.fuse2_weight"))?,
            fuse2_bias: take(&format!("{prefix}.fuse2_bias"))?,
        })
    };
    let source_user = tower("source_user")?;
    let source_item = tower("source_item")?;
    let target_user = tower("target_user")?;
    let target_item = tower("target_item")?;
    let head = crate::model::PredictorParams {
        hidden_weight: take("head.hidden_weight")?,
        hidden_bias: take("head.hidden_bias")?,
        out_weight: take("head.out_weight")?,
        out_bias: take("head.out_bias")?,
    };
    if let Some(name) = blobs.keys().next() {
        return Err(Error::Format(format!("unknown tensor {name} in checkpoint")));
    }
    Ok(ModelParams {
        source_user,
        source_item,
        target_user,
        target_item,
        head,
    })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
