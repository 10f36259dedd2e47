//! Versioned binary snapshots of a run.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic      8 bytes  "PRPLSNAP"
//! version    u32
//! length     u64      payload byte count
//! digest     32 bytes SHA-256 of the payload
//! payload    bincode-encoded run state
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PRPLSNAP";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 + 32;

pub fn encode<T: serde::Serialize>(state: &T) -> Result<Vec<u8>> {
    let payload = bincode::serialize(state).map_err(|e| Error::Snapshot(format!("encode: {e}")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&Sha256::digest(&payload));
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Validates the header and digest, returning the payload.
fn payload(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Snapshot(format!("truncated header: {} bytes", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Snapshot("bad magic; not a snapshot file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Snapshot(format!("format version {version} is not supported (expected {FORMAT_VERSION})")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let body = &bytes[HEADER_LEN..];
    if body.len() as u64 != len {
        return Err(Error::Snapshot(format!("corrupt snapshot: payload is {} bytes, header says {len}", body.len())));
    }
    if Sha256::digest(body).as_slice() != &bytes[20..52] {
        return Err(Error::Snapshot("corrupt snapshot: digest mismatch".into()));
    }
    Ok(body)
}

pub fn decode<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    bincode::deserialize(payload(bytes)?).map_err(|e| Error::Snapshot(format!("corrupt snapshot: {e}")))
}

/// Hex SHA-256 of the payload.
pub fn state_hash(bytes: &[u8]) -> Result<String> {
    Ok(Sha256::digest(payload(bytes)?).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn write_file<T: serde::Serialize>(path: &Path, state: &T) -> Result<()> {
    Ok(std::fs::write(path, encode(state)?)?)
}

pub fn read_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    decode(&std::fs::read(path)?)
}
