//! Versioned binary checkpoints.
//!
//! Layout: an 8-byte magic (`MKCHKPT1`, the trailing digit is the format
//! version), a little-endian u32 header length, a JSON header (network spec
//! plus provenance metadata), then per layer the weight tensor dims and raw
//! little-endian f64 data followed by the bias row. Raw f64 bytes make the
//! round trip bit-exact by construction.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Normalization;
use crate::error::{MkError, Result};
use crate::kernel::ExtendedKernel;
use crate::linalg::{Matrix, Tensor3};
use crate::network::{ModelParams, NetworkSpec};

const MAGIC: &[u8; 8] = b"MKCHKPT1";

/// Provenance stored with every checkpoint: the resolved configuration that
/// produced it, the seed, the algorithm tag, the library version, and the
/// input normalization (when trained on normalized data) so inference is
/// self-contained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version_tag: String,
    pub algorithm: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub normalization: Option<Normalization>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    meta: CheckpointMeta,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> MkError {
    MkError::Checkpoint { path: path.to_path_buf(), reason: reason.into() }
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, meta: &CheckpointMeta) -> Result<()> {
    let header = serde_json::to_vec(&Header { spec: params.spec.clone(), meta: meta.clone() })?;
    let mut out = Vec::with_capacity(header.len() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for kernel in &params.layers {
        let (n, m, e) = kernel.dims();
        for dim in [n, m, e] {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &x in kernel.weights.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&(m as u64).to_le_bytes());
        for &x in kernel.bias.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, &out).map_err(|e| corrupt(path, format!("cannot write: {e}")))
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(corrupt(self.path, format!("truncated: wanted {n} bytes at offset {}", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| corrupt(path, format!("cannot read: {e}")))?;
    let mut r = Reader { path, bytes: &bytes, pos: 0 };

    if r.take(8)? != MAGIC {
        return Err(corrupt(path, "not a checkpoint file (bad magic)"));
    }
    let header_len = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| corrupt(path, format!("bad header: {e}")))?;
    header.spec.validate().map_err(|e| corrupt(path, format!("invalid spec in header: {e}")))?;

    let expected_dims = header.spec.layer_dims();
    let mut layers = Vec::with_capacity(expected_dims.len());
    for (l, &(want_n, want_m)) in expected_dims.iter().enumerate() {
        let (n, m, e) = (r.u64()? as usize, r.u64()? as usize, r.u64()? as usize);
        if (n, m) != (want_n, want_m) || e != header.spec.expansion {
            return Err(corrupt(
                path,
                format!(
                    "layer {l}: stored shape {n}x{m}x{e} does not match spec {want_n}x{want_m}x{}",
                    header.spec.expansion
                ),
            ));
        }
        let weights = Tensor3::from_vec(n, m, e, r.f64s(n * m * e)?);
        let bias_m = r.u64()? as usize;
        if bias_m != m {
            return Err(corrupt(path, format!("layer {l}: bias length {bias_m} does not match width {m}")));
        }
        let bias = Matrix::from_vec(1, m, r.f64s(m)?);
        layers.push(ExtendedKernel::new(weights, bias));
    }
    if r.pos != bytes.len() {
        return Err(corrupt(path, format!("{} trailing bytes after last layer", bytes.len() - r.pos)));
    }
    Ok((ModelParams { spec: header.spec, layers }, header.meta))
}
