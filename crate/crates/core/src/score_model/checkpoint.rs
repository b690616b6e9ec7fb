//! Model checkpoints: `b"SRDM"`, `u32` version, architecture block
//! (`u32` input channels, `u32` depth, `depth × u32` widths, `u32`
//! embedding dimension, `u32` head code), `u64` parameter count, then the parameters as
//! `f64`. All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::denoiser::{DenoiserArch, DenoiserModel, Head, IN_CHANNELS};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SRDM";
pub const CHECKPOINT_VERSION: u32 = 2;

pub fn save_checkpoint(model: &DenoiserModel) -> Vec<u8> {
    let arch = model.arch();
    let mut out = Vec::with_capacity(32 + 8 * model.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(IN_CHANNELS as u32).to_le_bytes());
    out.extend_from_slice(&(arch.depth() as u32).to_le_bytes());
    for &w in &arch.widths {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out.extend_from_slice(&(arch.temb_dim as u32).to_le_bytes());
    out.extend_from_slice(&arch.head.code().to_le_bytes());
    out.extend_from_slice(&(model.param_count() as u64).to_le_bytes());
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::CheckpointMismatch("truncated checkpoint".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// The noise schedule is not stored; residual-head models need
/// [`DenoiserModel::bind_schedule`] before use.
pub fn load_checkpoint(bytes: &[u8]) -> Result<DenoiserModel> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointMismatch("missing SRDM magic".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointMismatch(format!(
            "version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let in_c = cur.u32()? as usize;
    if in_c != IN_CHANNELS {
        return Err(Error::CheckpointMismatch(format!("{in_c} input channels, expected {IN_CHANNELS}")));
    }
    let depth = cur.u32()? as usize;
    if depth > 16 {
        return Err(Error::CheckpointMismatch(format!("implausible depth {depth}")));
    }
    let widths = (0..depth).map(|_| cur.u32().map(|w| w as usize)).collect::<Result<Vec<_>>>()?;
    let temb_dim = cur.u32()? as usize;
    let code = cur.u32()?;
    let head = Head::from_code(code).ok_or_else(|| Error::CheckpointMismatch(format!("unknown head code {code}")))?;
    let count = cur.u64()? as usize;
    let raw = cur.take(count.checked_mul(8).ok_or_else(|| Error::CheckpointMismatch("bad count".into()))?)?;
    if cur.pos != bytes.len() {
        return Err(Error::CheckpointMismatch("trailing bytes".into()));
    }
    let params = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    DenoiserModel::from_params(DenoiserArch { widths, temb_dim, head }, params)
}

pub fn write_checkpoint(path: &Path, model: &DenoiserModel) -> Result<()> {
    fs::write(path, save_checkpoint(model)).map_err(|e| Error::from(e).at(path))
}

pub fn read_checkpoint(path: &Path) -> Result<DenoiserModel> {
    let bytes = fs::read(path).map_err(|e| Error::from(e).at(path))?;
    load_checkpoint(&bytes).map_err(|e| e.at(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = DenoiserModel::new(DenoiserArch { widths: vec![4, 6, 8], temb_dim: 6, ..Default::default() }, 17).unwrap();
        let bytes = save_checkpoint(&model);
        let back = load_checkpoint(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(save_checkpoint(&back), bytes);
        assert_eq!(&bytes[..4], b"SRDM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
    }

    #[test]
    fn version_and_size_mismatches_are_rejected() {
        let model = DenoiserModel::new(DenoiserArch { widths: vec![2], temb_dim: 2, ..Default::default() }, 0).unwrap();
        let bytes = save_checkpoint(&model);
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 1;
        assert!(matches!(load_checkpoint(&wrong_version), Err(Error::CheckpointMismatch(_))));
        assert!(load_checkpoint(&bytes[..bytes.len() - 8]).is_err());
        let mut wrong_width = bytes.clone();
        wrong_width[16] = 3;
        assert!(matches!(load_checkpoint(&wrong_width), Err(Error::CheckpointMismatch(_))));
        assert!(load_checkpoint(b"NOPE").is_err());
        let mut wrong_head = bytes.clone();
        wrong_head[24] = 7;
        assert!(matches!(load_checkpoint(&wrong_head), Err(Error::CheckpointMismatch(_))));
    }
}
