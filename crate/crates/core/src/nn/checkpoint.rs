//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes  "RDMKCKPT"
//! version    u32 LE   (1)
//! config     u32 LE byte length, then UTF-8 JSON of the ModelConfig
//! params     u64 LE count, then count × f32 LE
//! buffers    u64 LE count, then count × f32 LE (batch-norm running stats)
//! ```

use std::fs;
use std::path::Path;

use super::model::{ModelConfig, TrainedModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RDMKCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(model: &TrainedModel) -> Vec<u8> {
    let config = serde_json::to_vec(model.config()).expect("model config serializes");
    let mut out = Vec::with_capacity(32 + config.len() + 4 * (model.parameters().len() + model.buffers().len()));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    for values in [model.parameters(), model.buffers()] {
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for &v in values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let slice = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(slice)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn f32s(&mut self) -> Option<Vec<f64>> {
        let n = usize::try_from(self.u64()?).ok()?;
        let raw = self.take(n.checked_mul(4)?)?;
        Some(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        )
    }
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<TrainedModel> {
    let bad = |msg: &str| Error::format(origin, msg.to_string());
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8) != Some(&CHECKPOINT_MAGIC[..]) {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = r.u32().ok_or_else(|| bad("truncated header"))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(len).ok_or_else(|| bad("truncated config"))?)
        .map_err(|e| bad(&format!("config: {e}")))?;
    let params = r.f32s().ok_or_else(|| bad("truncated parameters"))?;
    let buffers = r.f32s().ok_or_else(|| bad("truncated buffers"))?;
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes after checkpoint"));
    }
    TrainedModel::from_parts(config, params, buffers).map_err(|e| match e {
        Error::Argument(m) => bad(&m),
        other => other,
    })
}

pub fn save_checkpoint(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
