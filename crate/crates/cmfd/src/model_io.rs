//! The binary model file.
//!
//! Little-endian, no padding: magic `CKNM`, format version `u32`, the shape
//! as eight `u32` (n1, gamma1, patch_side, sub2_side, gamma2, n2, raw_dim,
//! out_dim), `alpha2` and `b2` as `f32`, then the row-major `f32` arrays
//! `W2`, `pca_mean` and `pca_proj`.

use std::path::Path;

use cmfd_core::ckn::{CknModel, CknShape};
use cmfd_core::Matrix;

use crate::error::{io_err, Error, Result};

pub const MAGIC: [u8; 4] = *b"CKNM";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 * 4 + 2 * 4;

pub fn encode_model(model: &CknModel) -> Vec<u8> {
    let s = &model.shape;
    let floats = model.w2.data.len() + model.pca_mean.len() + model.pca_proj.data.len();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * floats);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [s.n1, s.gamma1, s.patch_side, s.sub2_side, s.gamma2, s.n2, s.raw_dim(), model.out_dim()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&model.alpha2.to_le_bytes());
    out.extend_from_slice(&model.b2.to_le_bytes());
    for v in model.w2.data.iter().chain(&model.pca_mean).chain(&model.pca_proj.data) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("model truncated in {what}")))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let len = n.checked_mul(4).ok_or_else(|| Error::Format(format!("{what} size overflows")))?;
        Ok(self.take(len, what)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

/// Parses and validates a model; trailing bytes are an error.
pub fn decode_model(bytes: &[u8]) -> Result<CknModel> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("missing CKNM magic".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let mut dims = [0usize; 8];
    for (d, name) in dims.iter_mut().zip(["n1", "gamma1", "patch_side", "sub2_side", "gamma2", "n2", "raw_dim", "out_dim"]) {
        *d = r.u32(name)? as usize;
    }
    let [n1, gamma1, patch_side, sub2_side, gamma2, n2, raw_dim, out_dim] = dims;
    let shape = CknShape { n1, gamma1, patch_side, sub2_side, gamma2, n2 };
    shape.validate()?;
    if raw_dim != shape.raw_dim() {
        return Err(Error::Format(format!("raw_dim {raw_dim} disagrees with the shape ({})", shape.raw_dim())));
    }
    let alpha2 = f32::from_le_bytes(r.take(4, "alpha2")?.try_into().expect("4 bytes"));
    let b2 = f32::from_le_bytes(r.take(4, "b2")?.try_into().expect("4 bytes"));
    let d = shape.subpatch_dim();
    let w2 = Matrix { rows: n2, cols: d, data: r.f32s(n2 * d, "W2")? };
    let pca_mean = r.f32s(raw_dim, "pca_mean")?;
    let pca_proj = Matrix { rows: out_dim, cols: raw_dim, data: r.f32s(out_dim * raw_dim, "pca_proj")? };
    if r.at != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after model", bytes.len() - r.at)));
    }
    let model = CknModel { shape, alpha2, w2, b2, pca_mean, pca_proj };
    model.validate()?;
    Ok(model)
}

pub fn save_model(path: impl AsRef<Path>, model: &CknModel) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_model(model)).map_err(io_err(path))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CknModel> {
    let path = path.as_ref();
    decode_model(&std::fs::read(path).map_err(io_err(path))?)
}
