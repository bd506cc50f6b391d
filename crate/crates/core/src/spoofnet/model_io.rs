//! Versioned, checksummed cascade model file.
//!
//! Layout (little-endian): `b"SPOOFNET"`, `u32` version, `u64` payload
//! length, 32-byte SHA-256 of the payload, payload. The payload is a `u32`
//! length-prefixed JSON header (both specs and the gate) followed by each
//! net's weights as a `u64` count and raw `f32` values in canonical buffer
//! order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cascade::CascadeModel;
use super::network::{hex_string, NetworkParams, NetworkSpec, SpoofNet};
use crate::error::{Error, Result};
use crate::io_util::write_atomic;

pub const MAGIC: &[u8; 8] = b"SPOOFNET";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 8 + 32;

#[derive(Serialize, Deserialize)]
struct Header {
    net1: NetworkSpec,
    net2: NetworkSpec,
    gate: f64,
}

fn push_weights(out: &mut Vec<u8>, params: &NetworkParams<f32>) {
    out.extend_from_slice(&(params.num_params() as u64).to_le_bytes());
    for (_, _, buf) in params.buffers() {
        for v in buf {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode_model(model: &CascadeModel) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        net1: model.net1.spec.clone(),
        net2: model.net2.spec.clone(),
        gate: model.gate(),
    })
    .map_err(|e| Error::ModelFormat(e.to_string()))?;
    let mut payload = Vec::new();
    payload.extend_from_slice(&(header.len() as u32).to_le_bytes());
    payload.extend_from_slice(&header);
    push_weights(&mut payload, &model.net1.params);
    push_weights(&mut payload, &model.net2.params);

    let mut out = Vec::with_capacity(PREAMBLE + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&Sha256::digest(&payload));
    out.extend_from_slice(&payload);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::ModelFormat("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

fn read_weights(r: &mut Reader<'_>, spec: &NetworkSpec) -> Result<SpoofNet<f32>> {
    let mut params = NetworkParams::<f32>::zeros(spec)?;
    let count = r.u64()?;
    if count != params.num_params() as u64 {
        return Err(Error::ModelFormat(format!(
            "weight count {count} does not match spec ({})",
            params.num_params()
        )));
    }
    for (_, _, buf) in params.buffers_mut() {
        let bytes = r.take(buf.len() * 4)?;
        for (v, b) in buf.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().expect("4 bytes"));
        }
    }
    params.ensure_finite()?;
    SpoofNet::new(spec.clone(), params)
}

pub fn decode_model(bytes: &[u8]) -> Result<CascadeModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)
        .map_err(|_| Error::ModelFormat("not a model file".into()))?
        != MAGIC
    {
        return Err(Error::ModelFormat("not a model file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let len = r.u64()?;
    let digest = r.take(32)?;
    let remaining = (bytes.len() - r.pos) as u64;
    if remaining < len {
        return Err(Error::ModelFormat("truncated file".into()));
    }
    if remaining > len {
        return Err(Error::ModelFormat("trailing bytes after payload".into()));
    }
    let payload = r.take(len as usize)?;
    if Sha256::digest(payload).as_slice() != digest {
        return Err(Error::Checksum);
    }

    let mut p = Reader {
        buf: payload,
        pos: 0,
    };
    let header_len = p.u32()? as usize;
    let header: Header = serde_json::from_slice(p.take(header_len)?)
        .map_err(|e| Error::ModelFormat(format!("header: {e}")))?;
    let net1 = read_weights(&mut p, &header.net1)?;
    let net2 = read_weights(&mut p, &header.net2)?;
    if p.pos != payload.len() {
        return Err(Error::ModelFormat("trailing bytes in payload".into()));
    }
    CascadeModel::new(net1, net2, header.gate)
}

pub fn save_model(model: &CascadeModel, path: &Path) -> Result<()> {
    write_atomic(path, &encode_model(model)?)
}

pub fn load_model(path: &Path) -> Result<CascadeModel> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_model(&bytes)
}

/// SHA-256 of the encoded model, as lowercase hex.
pub fn model_digest(model: &CascadeModel) -> Result<String> {
    Ok(hex_string(&Sha256::digest(encode_model(model)?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spoofnet::cascade::tests::tiny_spec;

    fn model() -> CascadeModel {
        CascadeModel::build(&tiny_spec(), 3, 4, 0.5).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = model();
        let bytes = encode_model(&m).unwrap();
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_model(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupted_weight_fails_checksum() {
        let mut bytes = encode_model(&model()).unwrap();
        let last = bytes.len() - 3;
        bytes[last] ^= 0x10;
        assert!(matches!(decode_model(&bytes), Err(Error::Checksum)));
    }

    #[test]
    fn version_and_truncation() {
        let bytes = encode_model(&model()).unwrap();
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(
            decode_model(&v2),
            Err(Error::Version {
                found: 2,
                expected: 1
            })
        ));
        for cut in [0, 5, 20, PREAMBLE, bytes.len() - 1] {
            assert!(decode_model(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_model(&long).is_err());
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let m = model();
        save_model(&m, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
        assert_eq!(model_digest(&m).unwrap().len(), 64);
    }
}
