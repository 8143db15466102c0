//! Message envelope and atomic file publication.
//!
//! Envelope layout (little endian): `u64 payload length`, `u64 CRC-64/XZ of
//! the payload`, payload bytes.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crc::{Crc, CRC_64_XZ};

pub const HEADER_LEN: usize = 16;

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

pub fn crc64(payload: &[u8]) -> u64 {
    CRC64.checksum(payload)
}

pub fn encode(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&crc64(payload).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvelopeError {
    #[error("envelope truncated: {0} bytes, header needs {HEADER_LEN}")]
    Truncated(usize),
    #[error("envelope declares {declared} payload bytes but carries {actual}")]
    LengthMismatch { declared: u64, actual: usize },
    #[error("payload checksum {actual:#018x} does not match envelope {declared:#018x}")]
    ChecksumMismatch { declared: u64, actual: u64 },
}

pub fn decode(bytes: &[u8]) -> Result<&[u8], EnvelopeError> {
    if bytes.len() < HEADER_LEN {
        return Err(EnvelopeError::Truncated(bytes.len()));
    }
    let declared = u64::from_le_bytes(bytes[0..8].try_into().unwrap());
    let sum = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let payload = &bytes[HEADER_LEN..];
    if declared != payload.len() as u64 {
        return Err(EnvelopeError::LengthMismatch { declared, actual: payload.len() });
    }
    let actual = crc64(payload);
    if actual != sum {
        return Err(EnvelopeError::ChecksumMismatch { declared: sum, actual });
    }
    Ok(payload)
}

fn temp_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!(".tmp.{name}.{}.{:016x}", std::process::id(), rand::random::<u64>()))
}

fn write_temp(dir: &Path, name: &str, bytes: &[u8]) -> io::Result<PathBuf> {
    let tmp = temp_path(dir, name);
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    Ok(tmp)
}

/// Writes `bytes` under `dir/name` so that the final name only ever refers
/// to complete contents.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> io::Result<()> {
    let tmp = write_temp(dir, name, bytes)?;
    fs::rename(&tmp, dir.join(name)).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

/// Like [`write_atomic`] but fails with `AlreadyExists` if `dir/name` exists.
pub fn create_atomic(dir: &Path, name: &str, bytes: &[u8]) -> io::Result<()> {
    let tmp = write_temp(dir, name, bytes)?;
    let res = fs::hard_link(&tmp, dir.join(name));
    let _ = fs::remove_file(&tmp);
    res
}
