use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};

/// Leading bytes of the binary embedding encoding.
pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";

/// Fixed-dimension face embeddings keyed by sample id, kept in insertion order.
///
/// Values are stored as `f32`, the precision of the binary encoding, so the
/// JSONL and binary files of one store decode to identical stores.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    values: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingLine {
    id: String,
    vector: Vec<f32>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            values: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index
            .get(id)
            .map(|&i| &self.values[i * self.dim..(i + 1) * self.dim])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .zip(self.values.chunks_exact(self.dim.max(1)))
            .map(|(id, v)| (id.as_str(), v))
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::Integrity(format!(
                "embedding {id:?} has dimension {}, store dimension is {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integrity(format!("embedding {id:?} has non-finite entries")));
        }
        if vector.iter().all(|&v| v == 0.0) {
            return Err(Error::Integrity(format!("embedding {id:?} has zero norm")));
        }
        if self.index.contains_key(&id) {
            return Err(Error::Integrity(format!("duplicate embedding id {id:?}")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.values.extend(vector);
        Ok(())
    }

    /// Number of stored ids that match no sample in `samples`.
    pub fn stale_count(&self, samples: &[Sample]) -> usize {
        let known: HashSet<&str> = samples.iter().map(|s| s.id.as_str()).collect();
        self.ids.iter().filter(|id| !known.contains(id.as_str())).count()
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (id, v) in self.iter() {
            let line = EmbeddingLine {
                id: id.to_string(),
                vector: v.to_vec(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// `EMB1`, u32 LE dimension, then per record: u32 LE id length, UTF-8 id
    /// bytes, `dimension` × f32 LE.
    pub fn to_binary(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(8 + self.len() * (8 + 4 * self.dim));
        buf.extend_from_slice(EMBEDDING_MAGIC);
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (id, v) in self.iter() {
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf
    }

    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_binary()).map_err(|e| Error::io(path, e))
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor { bytes, pos: 0 };
        if cursor.take(4)? != EMBEDDING_MAGIC {
            return Err(Error::Integrity("missing EMB1 magic".into()));
        }
        let dim = cursor.u32()? as usize;
        let mut store = Self::new(dim);
        while cursor.pos < bytes.len() {
            let n = cursor.u32()? as usize;
            let id = std::str::from_utf8(cursor.take(n)?)
                .map_err(|e| Error::Integrity(format!("embedding id is not UTF-8: {e}")))?
                .to_string();
            let raw = cursor.take(4 * dim)?;
            let vector = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            store.insert(id, vector)?;
        }
        Ok(store)
    }

    fn from_jsonl(reader: impl BufRead, path: &Path) -> Result<Self> {
        let mut store: Option<Self> = None;
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            let store = store.get_or_insert_with(|| Self::new(rec.vector.len()));
            store.insert(rec.id, rec.vector)?;
        }
        Ok(store.unwrap_or_else(|| Self::new(0)))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Integrity(format!(
                "truncated embedding file: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Loads either encoding; the binary one is recognised by its magic bytes.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(EMBEDDING_MAGIC) {
        EmbeddingStore::from_binary(&bytes)
    } else {
        EmbeddingStore::from_jsonl(BufReader::new(bytes.as_slice()), path)
    }
}
