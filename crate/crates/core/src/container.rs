//! Named-tensor container: an 8-byte little-endian header length, a JSON
//! header mapping each name to `{dtype, shape, offset}`, then the raw
//! little-endian row-major payload. The optional `__metadata__` header key
//! carries arbitrary JSON.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    dtype: DType,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dtype: DType,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub tensors: Vec<NamedTensor>,
    pub metadata: Value,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, dtype: DType, value: Tensor) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            dtype,
            value,
        });
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = serde_json::Map::new();
        let mut payload = Vec::new();
        for t in &self.tensors {
            let entry = Entry {
                dtype: t.dtype,
                shape: vec![t.value.rows(), t.value.cols()],
                offset: payload.len(),
            };
            header.insert(t.name.clone(), serde_json::to_value(entry).expect("entry serializes"));
            match t.dtype {
                DType::F64 => payload.extend(t.value.to_le_bytes()),
                DType::F32 => payload.extend(t.value.data().iter().flat_map(|&v| (v as f32).to_le_bytes())),
            }
        }
        if !self.metadata.is_null() {
            header.insert(METADATA_KEY.into(), self.metadata.clone());
        }
        let header = serde_json::to_vec(&Value::Object(header)).expect("header serializes");
        let mut out = Vec::with_capacity(8 + header.len() + payload.len());
        out.extend((header.len() as u64).to_le_bytes());
        out.extend(header);
        out.extend(payload);
        out
    }

    /// Tensors come back ordered by payload offset, which is the write order.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Container(m.to_string());
        if bytes.len() < 8 {
            return Err(bad("file shorter than its header length"));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let header_end = 8usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("header length exceeds file size"))?;
        let header: BTreeMap<String, Value> = serde_json::from_slice(&bytes[8..header_end])?;
        let payload = &bytes[header_end..];
        let mut metadata = Value::Null;
        let mut tensors = Vec::new();
        for (name, v) in header {
            if name == METADATA_KEY {
                metadata = v;
                continue;
            }
            let e: Entry = serde_json::from_value(v)?;
            let (rows, cols) = match e.shape[..] {
                [n] => (1, n),
                [r, c] => (r, c),
                [] => (1, 1),
                _ => return Err(Error::Container(format!("{name}: only 1-D and 2-D tensors are supported"))),
            };
            let n = rows * cols;
            let end = e.offset + n * e.dtype.size();
            let raw = payload
                .get(e.offset..end)
                .ok_or_else(|| Error::Container(format!("{name}: data outside payload")))?;
            let data: Vec<f64> = match e.dtype {
                DType::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
            };
            tensors.push((
                e.offset,
                NamedTensor {
                    name,
                    dtype: e.dtype,
                    value: Tensor::from_vec(rows, cols, data),
                },
            ));
        }
        tensors.sort_by_key(|(o, _)| *o);
        Ok(Self {
            tensors: tensors.into_iter().map(|(_, t)| t).collect(),
            metadata,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
