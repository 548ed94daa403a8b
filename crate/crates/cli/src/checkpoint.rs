//! The `.asft` container: magic `ASFT`, a u32 format version, a u64
//! little-endian header length, a JSON header naming each array with its
//! shape and byte offset into the payload, then packed little-endian f64
//! values.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"ASFT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    arrays: Vec<ArrayEntry>,
    #[serde(default)]
    meta: BTreeMap<String, serde_json::Value>,
}

/// Named f64 arrays plus free-form JSON metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    arrays: Vec<NamedArray>,
    pub meta: BTreeMap<String, serde_json::Value>,
}

fn malformed(what: impl Into<String>) -> CliError {
    CliError::usage(format!("malformed checkpoint: {}", what.into()))
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an array; names must be unique and the shape must match the
    /// data length.
    pub fn push(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> CliResult<()> {
        if self.arrays.iter().any(|a| a.name == name) {
            return Err(CliError::usage(format!("duplicate array name `{name}`")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(CliError::usage(format!(
                "array `{name}` has {} values but shape {shape:?}",
                data.len()
            )));
        }
        self.arrays.push(NamedArray {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
        Ok(())
    }

    pub fn arrays(&self) -> &[NamedArray] {
        &self.arrays
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    /// The named array, which must be present with the given rank.
    pub fn require(&self, name: &str, rank: usize) -> CliResult<&NamedArray> {
        let a = self
            .get(name)
            .ok_or_else(|| malformed(format!("missing array `{name}`")))?;
        if a.shape.len() != rank {
            return Err(malformed(format!("array `{name}` has rank {}, expected {rank}", a.shape.len())));
        }
        Ok(a)
    }

    pub fn to_bytes(&self) -> CliResult<Vec<u8>> {
        let mut offset = 0u64;
        let mut entries = Vec::with_capacity(self.arrays.len());
        for a in &self.arrays {
            entries.push(ArrayEntry {
                name: a.name.clone(),
                shape: a.shape.clone(),
                offset,
            });
            offset += 8 * a.data.len() as u64;
        }
        let header = serde_json::to_vec(&Header {
            arrays: entries,
            meta: self.meta.clone(),
        })
        .map_err(|e| CliError::usage(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for a in &self.arrays {
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(malformed("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(malformed(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let payload_start = usize::try_from(header_len)
            .ok()
            .and_then(|h| h.checked_add(16))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| malformed("header runs past the end of the file"))?;
        let header: Header =
            serde_json::from_slice(&bytes[16..payload_start]).map_err(|e| malformed(e.to_string()))?;
        let payload = &bytes[payload_start..];

        let mut names = HashSet::new();
        let mut spans = Vec::with_capacity(header.arrays.len());
        for e in &header.arrays {
            if !names.insert(e.name.as_str()) {
                return Err(malformed(format!("duplicate array name `{}`", e.name)));
            }
            let len = e
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| malformed(format!("array `{}` is too large", e.name)))?;
            let start = usize::try_from(e.offset).map_err(|_| malformed("offset overflow"))?;
            let end = start
                .checked_add(len)
                .filter(|&end| end <= payload.len())
                .ok_or_else(|| malformed(format!("array `{}` runs past the end of the file", e.name)))?;
            spans.push((start, end));
        }
        let mut sorted = spans.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0].1 > w[1].0) {
            return Err(malformed("overlapping arrays"));
        }

        let arrays = header
            .arrays
            .into_iter()
            .zip(spans)
            .map(|(e, (start, end))| NamedArray {
                name: e.name,
                shape: e.shape,
                data: payload[start..end]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            })
            .collect();
        Ok(Self {
            arrays,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| CliError::usage(format!("{}: {}", path.display(), e.message)))
    }
}
