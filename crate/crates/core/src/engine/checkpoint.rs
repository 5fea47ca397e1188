//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes  "CDCKPT01"
//! layers   u32 LE
//! per layer:
//!   rows   u32 LE
//!   cols   u32 LE
//!   weight rows*cols f32 LE, row-major
//!   bias   rows f32 LE
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Layer, MlpModel};

pub const MAGIC: &[u8; 8] = b"CDCKPT01";
const MAGIC_PREFIX: &[u8; 6] = b"CDCKPT";

/// A frozen student snapshot taken at the end of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub model: MlpModel,
    pub task: usize,
    pub config_hash: String,
}

pub fn encode_checkpoint(model: &MlpModel) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 4 * model.param_count() + 8 * model.layers().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&u32_of(model.layers().len())?.to_le_bytes());
    for layer in model.layers() {
        out.extend_from_slice(&u32_of(layer.weight.rows())?.to_le_bytes());
        out.extend_from_slice(&u32_of(layer.weight.cols())?.to_le_bytes());
        for &v in layer.weight.as_slice().iter().chain(&layer.bias) {
            let single = v as f32;
            if !single.is_finite() {
                return Err(invalid(format!("parameter {v} does not fit in single precision")));
            }
            out.extend_from_slice(&single.to_le_bytes());
        }
    }
    Ok(out)
}

fn u32_of(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| invalid(format!("{n} exceeds the u32 range of the format")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!(
                "checkpoint truncated at byte {} (needed {n} more)",
                self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<MlpModel> {
    if bytes.len() < MAGIC.len() || &bytes[..6] != MAGIC_PREFIX {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Format(format!(
            "unsupported checkpoint version '{}'",
            String::from_utf8_lossy(&bytes[6..8])
        )));
    }
    let mut cur = Cursor { bytes, pos: 8 };
    let n_layers = cur.u32()?;
    if n_layers == 0 {
        return Err(Error::Format("checkpoint has no layers".into()));
    }
    let mut layers = Vec::new();
    for _ in 0..n_layers {
        let rows = cur.u32()?;
        let cols = cur.u32()?;
        let weight = cur.f32s(rows.saturating_mul(cols))?;
        let bias = cur.f32s(rows)?;
        let weight = Matrix::new(rows, cols, weight).map_err(|e| Error::Format(e.to_string()))?;
        layers.push(Layer::new(weight, bias).map_err(|e| Error::Format(e.to_string()))?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last layer",
            bytes.len() - cur.pos
        )));
    }
    MlpModel::from_layers(layers).map_err(|e| Error::Format(e.to_string()))
}

/// Writes through a temporary file and renames, so readers never see a
/// partial checkpoint.
pub fn save_checkpoint(model: &MlpModel, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MlpModel> {
    decode_checkpoint(&fs::read(path)?)
}
