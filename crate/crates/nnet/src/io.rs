//! Parameter files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PNLW"  u32 version
//! [32]    sha256 of the config JSON
//! u32 len, config JSON
//! u32 tensor count
//! per tensor: u32 name len, name, u32 ndim, u32 dims.., f32 values..
//! [32]    sha256 of everything above
//! ```

use std::io::{Error, ErrorKind};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::{ModelConfig, NnError, ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"PNLW";
const VERSION: u32 = 1;

pub fn config_digest(config: &ModelConfig) -> [u8; 32] {
    let json = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&json).into()
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<(), NnError> {
    let v = u32::try_from(v).map_err(|_| Error::new(ErrorKind::InvalidInput, "length exceeds u32"))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_params(config: &ModelConfig, store: &ParamStore) -> Result<Vec<u8>, NnError> {
    config.check_params(store)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&config_digest(config));
    let json = serde_json::to_vec(config).expect("config serializes");
    put_u32(&mut buf, json.len())?;
    buf.extend_from_slice(&json);
    put_u32(&mut buf, store.len())?;
    for (name, t) in store {
        put_u32(&mut buf, name.len())?;
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut buf, d)?;
        }
        for &v in t.data() {
            let f = v as f32;
            if f as f64 != v {
                return Err(NnError::NotF32(name.clone()));
            }
            buf.extend_from_slice(&f.to_le_bytes());
        }
    }
    let sum: [u8; 32] = Sha256::digest(&buf).into();
    buf.extend_from_slice(&sum);
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(msg: &str) -> NnError {
    NnError::Io(Error::new(ErrorKind::InvalidData, msg.to_string()))
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("truncated parameter file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

/// Decodes a parameter file, checking integrity and that it was written for
/// `config`.
pub fn decode_params(config: &ModelConfig, bytes: &[u8]) -> Result<ParamStore, NnError> {
    let (config_json, store) = decode_any(bytes)?;
    let digest: [u8; 32] = Sha256::digest(&config_json).into();
    if digest != config_digest(config) {
        return Err(NnError::ConfigMismatch);
    }
    config.check_params(&store)?;
    Ok(store)
}

/// Reads the config stored in a parameter file.
pub fn read_config(path: impl AsRef<Path>) -> Result<ModelConfig, NnError> {
    let bytes = std::fs::read(path)?;
    let (json, _) = decode_any(&bytes)?;
    serde_json::from_slice(&json).map_err(|_| corrupt("stored config is not valid"))
}

fn decode_any(bytes: &[u8]) -> Result<(Vec<u8>, ParamStore), NnError> {
    if bytes.len() < 4 + 4 + 32 + 32 || &bytes[..4] != MAGIC {
        return Err(corrupt("not a parameter file"));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(corrupt("parameter file checksum mismatch"));
    }
    let mut r = Reader { buf: body, pos: 4 };
    if r.u32()? != VERSION as usize {
        return Err(corrupt("unsupported parameter file version"));
    }
    let digest = r.take(32)?;
    let n = r.u32()?;
    let json = r.take(n)?.to_vec();
    if Sha256::digest(&json).as_slice() != digest {
        return Err(corrupt("config digest does not match stored config"));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let n = r.u32()?;
        let name = std::str::from_utf8(r.take(n)?).map_err(|_| corrupt("parameter name is not UTF-8"))?.to_string();
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("tensor too large"))?;
        let raw = r.take(len.checked_mul(4).ok_or_else(|| corrupt("tensor too large"))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
        store.insert(name, Tensor::new(shape, data)?);
    }
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes in parameter file"));
    }
    Ok((json, store))
}

/// Writes atomically via a sibling temporary file.
pub fn save_params(config: &ModelConfig, store: &ParamStore, path: impl AsRef<Path>) -> Result<(), NnError> {
    let path = path.as_ref();
    let bytes = encode_params(config, store)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_params(config: &ModelConfig, path: impl AsRef<Path>) -> Result<ParamStore, NnError> {
    decode_params(config, &std::fs::read(path)?)
}
