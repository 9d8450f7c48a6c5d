//! `final_model.bin`: magic, little-endian `u32` header length, a JSON
//! header, then every parameter as a little-endian `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::segbench::{ModelConfig, PixelModel};

pub const MODEL_MAGIC: &[u8; 8] = b"BARRIERX";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    model: ModelConfig,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    count: usize,
}

const NAMES: [&str; 4] = ["w1", "b1", "w2", "b2"];

pub fn encode_model(model: &PixelModel) -> Result<Vec<u8>> {
    let header = Header {
        format_version: MODEL_FORMAT_VERSION,
        model: model.config,
        names: NAMES.iter().map(|s| s.to_string()).collect(),
        shapes: model.params.iter().map(|p| p.shape().to_vec()).collect(),
        count: model.params.iter().map(Tensor::numel).sum(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 8 * header.count);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &model.params {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<PixelModel> {
    let bad = |detail: String| Error::Format { path: "final_model.bin".into(), detail };
    if bytes.len() < 12 || &bytes[..8] != MODEL_MAGIC {
        return Err(bad("missing magic".into()));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + len).ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(e.to_string()))?;
    if header.format_version != MODEL_FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {}", header.format_version)));
    }
    let payload = &bytes[12 + len..];
    if payload.len() != 8 * header.count || header.shapes.iter().map(|s| s.iter().product::<usize>()).sum::<usize>() != header.count {
        return Err(bad(format!("expected {} parameters, found {} bytes", header.count, payload.len())));
    }
    let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let params = header
        .shapes
        .into_iter()
        .map(|shape| {
            let n = shape.iter().product();
            Tensor::new(shape, values.by_ref().take(n).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    PixelModel::from_params(header.model, params)
}

pub fn save_model(model: &PixelModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<PixelModel> {
    decode_model(&std::fs::read(path)?).map_err(|e| match e {
        Error::Format { detail, .. } => Error::Format { path: path.to_path_buf(), detail },
        other => other,
    })
}
