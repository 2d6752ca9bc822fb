//! Binary checkpoint container.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! b"RFFICKPT" | version | header_len | header JSON | tensor_count |
//!     { ndim | dims... | f32 data... } * tensor_count
//! ```
//!
//! The header carries the architecture, whether the classifier tensors are
//! present, and free-form metadata. Tensors follow in parameter order.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ArchitectureSpec, ModelParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RFFICKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    architecture: ArchitectureSpec,
    has_classifier: bool,
    metadata: serde_json::Value,
}

/// Parameters plus metadata. `params.classifier` is empty for
/// extractor-only checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn new(params: ModelParams<f32>, metadata: serde_json::Value) -> Self {
        Checkpoint { params, metadata }
    }

    /// Same checkpoint with the classifier dropped.
    pub fn extractor_only(mut self) -> Self {
        self.params.classifier.clear();
        self
    }

    pub fn has_classifier(&self) -> bool {
        !self.params.classifier.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            architecture: self.params.arch.clone(),
            has_classifier: self.has_classifier(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let tensors: Vec<&Tensor<f32>> = self.params.iter().collect();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(path, reason);
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic)
            .map_err(|_| bad("file too short for magic".into()))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let mut u32_at = |what: &str| -> Result<u32> {
            let mut b = [0u8; 4];
            cur.read_exact(&mut b)
                .map_err(|_| bad(format!("truncated while reading {what}")))?;
            Ok(u32::from_le_bytes(b))
        };
        let version = u32_at("version")?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u32_at("header length")? as usize;
        let pos = cur.position() as usize;
        let header_bytes = bytes
            .get(pos..pos + header_len)
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header =
            serde_json::from_slice(header_bytes).map_err(|e| bad(format!("header: {e}")))?;
        cur.set_position((pos + header_len) as u64);
        let mut read_u32 = |what: &str| -> Result<u32> {
            let mut b = [0u8; 4];
            cur.read_exact(&mut b)
                .map_err(|_| bad(format!("truncated while reading {what}")))?;
            Ok(u32::from_le_bytes(b))
        };
        let count = read_u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count);
        for i in 0..count {
            let ndim = read_u32("tensor rank")? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u32("tensor dims")? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f32::from_bits(read_u32(&format!("tensor {i} data"))?));
            }
            tensors.push(Tensor::from_vec(&shape, data));
        }
        if (cur.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes after last tensor".into()));
        }
        let n_cls = if header.has_classifier { 2 } else { 0 };
        if tensors.len() < n_cls {
            return Err(bad("too few tensors".into()));
        }
        let classifier = tensors.split_off(tensors.len() - n_cls);
        let params = ModelParams {
            arch: header.architecture,
            extractor: tensors,
            classifier,
        };
        let mut check = params.clone();
        if !header.has_classifier {
            let full = ModelParams::<f32>::init(&check.arch, 0).map_err(|e| bad(e.to_string()))?;
            check.classifier = full.classifier;
        }
        check.validate().map_err(|e| bad(e.to_string()))?;
        Ok(Checkpoint {
            params,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let arch = ArchitectureSpec::resnet9(5, [12, 20]).with_width_scale(0.25);
        let params = ModelParams::<f32>::init(&arch, 9).unwrap();
        let ck = Checkpoint::new(params, serde_json::json!({"note": "x"}));
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, ck);

        let ex = ck.extractor_only();
        let back = Checkpoint::from_bytes(&ex.to_bytes(), Path::new("mem")).unwrap();
        assert!(!back.has_classifier());
        assert_eq!(back, ex);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let arch = ArchitectureSpec::resnet9(2, [12, 20]).with_width_scale(0.25);
        let ck = Checkpoint::new(ModelParams::init(&arch, 1).unwrap(), serde_json::Value::Null);
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], Path::new("m")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad, Path::new("m")).is_err());
    }
}
