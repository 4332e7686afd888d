//! Binary checkpoint: magic, version, JSON header, then named little-endian f32 tensors.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::song::Axis;

use super::context::TokenVocab;
use super::model::{PlannerModel, Tensor};
use super::{PlannerConfig, PlannerError};

const MAGIC: &[u8; 4] = b"PLNR";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: PlannerConfig,
    axes: Vec<(String, Vec<String>)>,
    vocab: TokenVocab,
}

fn bad(msg: impl Into<String>) -> PlannerError {
    PlannerError::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(model: &PlannerModel<f32>, mut w: W) -> Result<(), PlannerError> {
    let header = Header {
        config: model.config.clone(),
        axes: Axis::ALL.iter().map(|a| (a.name().to_string(), a.labels().iter().map(|s| s.to_string()).collect())).collect(),
        vocab: model.vocab.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for t in &model.params {
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for d in &t.shape {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.data.len() * 4);
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn u32_of<R: Read>(r: &mut R) -> Result<u32, PlannerError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<PlannerModel<f32>, PlannerError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
    if &magic != MAGIC {
        return Err(bad("not a planner checkpoint"));
    }
    let version = u32_of(&mut r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| bad(e.to_string()))?;
    for (a, (name, labels)) in Axis::ALL.iter().zip(&header.axes) {
        if a.name() != name || a.labels().len() != labels.len() {
            return Err(bad(format!("axis vocabulary mismatch on {name}")));
        }
    }
    if header.vocab != TokenVocab::new(&header.config) {
        return Err(bad("token vocabulary mismatch"));
    }
    let count = u32_of(&mut r)? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let n = u32_of(&mut r)? as usize;
        let mut name = vec![0u8; n];
        r.read_exact(&mut name)?;
        let ndim = u32_of(&mut r)? as usize;
        let shape = (0..ndim).map(|_| u32_of(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let size: usize = shape.iter().product();
        let mut raw = vec![0u8; size * 4];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        params.push(Tensor { name: String::from_utf8(name).map_err(|e| bad(e.to_string()))?, shape, data });
    }
    PlannerModel::from_parts(header.config, params).map_err(bad)
}

pub fn save_checkpoint(model: &PlannerModel<f32>, path: &Path) -> Result<(), PlannerError> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PlannerModel<f32>, PlannerError> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}
