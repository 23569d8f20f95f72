//! Flat binary parameter checkpoints.
//!
//! ```text
//! "NLCK"  u32 version
//! u32 n   JSON metadata (n bytes, UTF-8)
//! u32     block count
//! per block:
//!   u16 n  name (n bytes)   u8 ndim   u32 dims[ndim]   f64 values[prod(dims)]
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::dqn::{DqnConfig, QNetwork, StateLayout};
use crate::nn::{CnnModel, CnnShape, LodConfig, Param, Parameters};
use crate::session::NormStats;

pub const MAGIC: &[u8; 4] = b"NLCK";
pub const VERSION: u32 = 1;
const MAX_META: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub blocks: Vec<Block>,
}

fn bad(msg: impl Into<String>) -> StoreError {
    StoreError::BadCheckpoint(msg.into())
}

fn read_exact<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>, StoreError> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|e| bad(format!("truncated: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, StoreError> {
    Ok(u32::from_le_bytes(
        read_exact(r, 4)?.try_into().expect("4 bytes"),
    ))
}

impl Checkpoint {
    pub fn from_params<P: Parameters>(meta: serde_json::Value, model: &P) -> Self {
        Checkpoint {
            meta,
            blocks: model
                .params()
                .into_iter()
                .map(|p| Block {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.value.clone(),
                })
                .collect(),
        }
    }

    /// Copy block values into `model`, which must have the same parameter
    /// names and shapes in the same order.
    pub fn load_into<P: Parameters>(&self, model: &mut P) -> Result<(), StoreError> {
        let params: Vec<&mut Param> = model.params_mut();
        if params.len() != self.blocks.len() {
            return Err(bad(format!(
                "{} blocks, model has {} parameters",
                self.blocks.len(),
                params.len()
            )));
        }
        for (p, b) in params.into_iter().zip(&self.blocks) {
            if p.name != b.name || p.shape != b.shape {
                return Err(bad(format!(
                    "block {} {:?} does not match parameter {} {:?}",
                    b.name, b.shape, p.name, p.shape
                )));
            }
            p.value.copy_from_slice(&b.data);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).expect("json value serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for b in &self.blocks {
            out.extend_from_slice(&(b.name.len() as u16).to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.push(b.shape.len() as u8);
            for &d in &b.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, StoreError> {
        if &read_exact(r, 4)?[..] != MAGIC {
            return Err(bad("wrong magic"));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let meta_len = read_u32(r)? as usize;
        if meta_len > MAX_META {
            return Err(bad(format!("metadata length {meta_len} too large")));
        }
        let meta = serde_json::from_slice(&read_exact(r, meta_len)?)
            .map_err(|e| bad(format!("metadata: {e}")))?;
        let count = read_u32(r)? as usize;
        let mut blocks = Vec::new();
        for _ in 0..count {
            let name_len =
                u16::from_le_bytes(read_exact(r, 2)?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8(read_exact(r, name_len)?)
                .map_err(|_| bad("block name is not UTF-8"))?;
            let ndim = read_exact(r, 1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u32(r)? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n <= 1 << 28)
                .ok_or_else(|| bad(format!("block {name} too large")))?;
            let raw = read_exact(r, n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            blocks.push(Block { name, shape, data });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| bad(e.to_string()))? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint { meta, blocks })
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let mut f = std::fs::File::create(path).map_err(|e| StoreError::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| StoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let bytes = std::fs::read(path).map_err(|e| StoreError::io(path, e))?;
        Self::read_from(&mut &bytes[..])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CnnMeta {
    kind: String,
    shape: CnnShape,
    lod: LodConfig,
    norm: NormStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentMeta {
    kind: String,
    layout: StateLayout,
    hidden: usize,
    config: DqnConfig,
}

pub fn save_cnn(path: &Path, model: &CnnModel, norm: &NormStats) -> Result<(), StoreError> {
    let meta = CnnMeta {
        kind: "cnn".into(),
        shape: model.shape,
        lod: model.lod,
        norm: *norm,
    };
    Checkpoint::from_params(serde_json::to_value(meta).expect("serializable"), model).save(path)
}

pub fn load_cnn(path: &Path) -> Result<(CnnModel, NormStats), StoreError> {
    let ck = Checkpoint::load(path)?;
    let meta: CnnMeta =
        serde_json::from_value(ck.meta.clone()).map_err(|e| bad(format!("cnn metadata: {e}")))?;
    if meta.kind != "cnn" {
        return Err(bad(format!(
            "expected a cnn checkpoint, found {}",
            meta.kind
        )));
    }
    let mut model = CnnModel::new(meta.shape, meta.lod, 0);
    ck.load_into(&mut model)?;
    Ok((model, meta.norm))
}

pub fn save_agent(
    path: &Path,
    q: &QNetwork,
    layout: &StateLayout,
    cfg: &DqnConfig,
) -> Result<(), StoreError> {
    let meta = AgentMeta {
        kind: "dqn".into(),
        layout: *layout,
        hidden: q.hidden,
        config: *cfg,
    };
    Checkpoint::from_params(serde_json::to_value(meta).expect("serializable"), q).save(path)
}

pub fn load_agent(path: &Path) -> Result<(QNetwork, StateLayout, DqnConfig), StoreError> {
    let ck = Checkpoint::load(path)?;
    let meta: AgentMeta =
        serde_json::from_value(ck.meta.clone()).map_err(|e| bad(format!("agent metadata: {e}")))?;
    if meta.kind != "dqn" {
        return Err(bad(format!(
            "expected a dqn checkpoint, found {}",
            meta.kind
        )));
    }
    let mut q = QNetwork::new(meta.layout.dim(), meta.hidden, 0);
    ck.load_into(&mut q)?;
    Ok((q, meta.layout, meta.config))
}
