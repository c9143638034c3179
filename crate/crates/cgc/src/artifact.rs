//! Artifact containers and fingerprints.
//!
//! Binary artifacts share one layout: a 4-byte magic, a `u16` little-endian
//! format version, a `u32` little-endian header length, a JSON header (typed
//! metadata plus a tensor directory), then raw little-endian `f32` tensor
//! data in directory order. JSON artifacts are pretty-printed with a trailing
//! newline. Serialized types use structs (never maps), so key order is fixed
//! by declaration and every writer is byte-deterministic: identical inputs
//! and seeds produce identical files.

use crate::error::{Error, Result};
use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

/// Format version embedded in every binary artifact.
pub const FORMAT_VERSION: u16 = 1;

/// Magic for model checkpoints.
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CGC1";
/// Magic for activation dumps.
pub const DUMP_MAGIC: [u8; 4] = *b"CGCA";
/// Magic for sparse-autoencoder banks.
pub const BANK_MAGIC: [u8; 4] = *b"CGCS";

/// SHA-256 of raw bytes, lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Fingerprint of any serializable value via its canonical JSON encoding.
pub fn fingerprint<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(value)?.as_bytes()))
}

/// One tensor in a container's directory. `offset` and `len` are in `f32`
/// elements relative to the start of the data section.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Header<M> {
    meta: M,
    tensors: Vec<TensorEntry>,
}

/// A parsed binary artifact: typed metadata plus named tensors.
pub struct Container<M> {
    pub meta: M,
    entries: Vec<TensorEntry>,
    data: Vec<f32>,
}

impl<M> Container<M> {
    /// Look up a tensor by name, returning its shape and data.
    pub fn tensor(&self, name: &str) -> Result<(&[usize], &[f32])> {
        let e = self
            .entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Format(format!("tensor {name:?} missing from container")))?;
        let (a, b) = (e.offset as usize, (e.offset + e.len) as usize);
        Ok((&e.shape, &self.data[a..b]))
    }

    /// Names in directory order.
    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }
}

/// Write a binary artifact. Tensor data is laid out in the order given.
pub fn write_container<M: Serialize>(
    path: &Path,
    magic: [u8; 4],
    meta: &M,
    tensors: &[(String, Vec<usize>, &[f32])],
) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, shape, data) in tensors {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                context: "write_container",
                expected: format!("{shape:?} = {numel} elements"),
                got: format!("{} elements for {name:?}", data.len()),
            });
        }
        entries.push(TensorEntry {
            name: name.clone(),
            shape: shape.clone(),
            offset,
            len: data.len() as u64,
        });
        offset += data.len() as u64;
    }
    let header = serde_json::to_vec(&Header {
        meta,
        tensors: entries,
    })?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&magic)?;
    f.write_all(&FORMAT_VERSION.to_le_bytes())?;
    f.write_all(&(header.len() as u32).to_le_bytes())?;
    f.write_all(&header)?;
    for (_, _, data) in tensors {
        for &v in *data {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Read a binary artifact, checking magic and version.
pub fn read_container<M: DeserializeOwned>(path: &Path, magic: [u8; 4]) -> Result<Container<M>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut got_magic = [0u8; 4];
    f.read_exact(&mut got_magic)
        .map_err(|_| Error::Format(format!("{}: truncated magic", path.display())))?;
    if got_magic != magic {
        return Err(Error::Format(format!(
            "{}: expected magic {:?}, found {:?}",
            path.display(),
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(&got_magic),
        )));
    }
    let mut buf2 = [0u8; 2];
    f.read_exact(&mut buf2)?;
    let version = u16::from_le_bytes(buf2);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported format version {version}",
            path.display()
        )));
    }
    let mut buf4 = [0u8; 4];
    f.read_exact(&mut buf4)?;
    let header_len = u32::from_le_bytes(buf4) as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes)?;
    let header: Header<M> = serde_json::from_slice(&header_bytes)?;
    let total: u64 = header.tensors.iter().map(|e| e.len).sum();
    let mut raw = Vec::new();
    f.read_to_end(&mut raw)?;
    if raw.len() != total as usize * 4 {
        return Err(Error::Format(format!(
            "{}: data section is {} bytes, directory wants {}",
            path.display(),
            raw.len(),
            total * 4
        )));
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Container {
        meta: header.meta,
        entries: header.tensors,
        data,
    })
}

/// Serialize a value as pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Write a JSON artifact.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_string(value)?)?;
    Ok(())
}

/// Read a JSON artifact.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}
