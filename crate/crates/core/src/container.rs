//! Binary container shared by demo archives, datasets and checkpoints.
//!
//! Layout: magic `SBC1`, 4-byte kind tag, u32 version, u64 header length,
//! JSON header, u64 value count, little-endian f64 payload, then a SHA-256
//! digest over every preceding byte.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SBC1";
const DIGEST_LEN: usize = 32;

/// Encodes a header and payload into container bytes.
pub fn encode<H: Serialize>(kind: &[u8; 4], version: u32, header: &H, payload: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(28 + json.len() + payload.len() * 8 + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(kind);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corruption("truncated container".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Decodes container bytes. The checksum is verified before anything else
/// is interpreted, so a damaged file never yields partial contents.
pub fn decode<H: DeserializeOwned>(bytes: &[u8], kind: &[u8; 4], version: u32) -> Result<(H, Vec<f64>)> {
    if bytes.len() < 12 + DIGEST_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Corruption("not a container file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Corruption("checksum mismatch".into()));
    }
    let kind_name = String::from_utf8_lossy(kind).into_owned();
    if &body[4..8] != kind {
        return Err(Error::Corruption(format!(
            "expected a {kind_name} file, found {}",
            String::from_utf8_lossy(&body[4..8])
        )));
    }
    let found = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if found != version {
        return Err(Error::Version {
            kind: kind_name,
            found,
            expected: version,
        });
    }
    let mut r = Reader { buf: body, pos: 12 };
    let hlen = r.u64()? as usize;
    let header: H = serde_json::from_slice(r.take(hlen)?)
        .map_err(|e| Error::Corruption(format!("bad header: {e}")))?;
    let count = r.u64()? as usize;
    if count.checked_mul(8) != Some(body.len() - r.pos) {
        return Err(Error::Corruption("payload length mismatch".into()));
    }
    let payload = r
        .take(count * 8)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, payload))
}

pub fn write_file<H: Serialize>(path: &Path, kind: &[u8; 4], version: u32, header: &H, payload: &[f64]) -> Result<()> {
    fs::write(path, encode(kind, version, header, payload)?)?;
    Ok(())
}

pub fn read_file<H: DeserializeOwned>(path: &Path, kind: &[u8; 4], version: u32) -> Result<(H, Vec<f64>)> {
    decode(&fs::read(path)?, kind, version)
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
