//! Versioned binary container for checkpoints.
//!
//! Layout: 4-byte magic, 4-byte artifact kind, little-endian `u32` format
//! version, little-endian `u64` payload length, JSON payload. The version is
//! checked on read so stale artifacts fail loudly instead of deserializing
//! into garbage.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"M3PT";

pub fn write_container<T: Serialize>(
    path: &Path,
    kind: [u8; 4],
    version: u32,
    payload: &T,
) -> Result<()> {
    let body = serde_json::to_vec(payload)?;
    let mut f = File::create(path)?;
    f.write_all(&MAGIC)?;
    f.write_all(&kind)?;
    f.write_all(&version.to_le_bytes())?;
    f.write_all(&(body.len() as u64).to_le_bytes())?;
    f.write_all(&body)?;
    Ok(())
}

pub fn read_container<T: DeserializeOwned>(
    path: &Path,
    kind: [u8; 4],
    expect_version: u32,
) -> Result<T> {
    let mut f = File::open(path)?;
    let mut header = [0u8; 20];
    f.read_exact(&mut header).map_err(|_| {
        Error::config(format!("{}: truncated container header", path.display()))
    })?;
    if header[0..4] != MAGIC {
        return Err(Error::config(format!(
            "{}: not a checkpoint container (bad magic)",
            path.display()
        )));
    }
    if header[4..8] != kind {
        return Err(Error::config(format!(
            "{}: wrong artifact kind (expected {:?})",
            path.display(),
            std::str::from_utf8(&kind).unwrap_or("?")
        )));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != expect_version {
        return Err(Error::config(format!(
            "{}: format version {version}, this build reads {expect_version}",
            path.display()
        )));
    }
    let len = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
    let mut body = vec![0u8; len];
    f.read_exact(&mut body)?;
    Ok(serde_json::from_slice(&body)?)
}
