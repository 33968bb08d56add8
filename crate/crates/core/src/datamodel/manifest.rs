use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AttackCategory, Label, Sample};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ImageField {
    Inline(Vec<f64>),
    Path(String),
}

#[derive(Debug, Deserialize)]
struct ManifestLine {
    id: String,
    identity: String,
    label: String,
    category: String,
    #[serde(default = "default_valid")]
    valid: bool,
    image: ImageField,
    width: usize,
    height: usize,
}

fn default_valid() -> bool {
    true
}

#[derive(Serialize)]
struct ManifestLineOut<'a> {
    id: &'a str,
    identity: &'a str,
    label: Label,
    category: AttackCategory,
    valid: bool,
    width: usize,
    height: usize,
    image: &'a [f64],
}

/// Reads a JSONL manifest, one sample per line.
///
/// Blank lines and header objects that carry a `meta` key but no `id` are
/// skipped. Images are either inline flat pixel arrays or paths (relative to
/// the manifest) of raw `f32` pixel files.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if value.get("id").is_none() && value.get("meta").is_some() {
            continue;
        }
        let record: ManifestLine = serde_json::from_value(value).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let sample = into_sample(record, base).map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("line {lineno}: {m}")),
            other => other,
        })?;
        if !seen.insert(sample.id.clone()) {
            return Err(Error::Integrity(format!(
                "duplicate sample id {:?} at line {lineno}",
                sample.id
            )));
        }
        samples.push(sample);
    }
    Ok(samples)
}

fn into_sample(record: ManifestLine, base: &Path) -> Result<Sample> {
    let label: Label = record.label.parse()?;
    let category: AttackCategory = record.category.parse()?;
    let shape = vec![record.height, record.width, 3];
    let pixels = match record.image {
        ImageField::Inline(v) => v,
        ImageField::Path(p) => read_raw_image(base.join(p), record.height, record.width)?.into_data(),
    };
    let image = Tensor::new(shape, pixels)
        .map_err(|e| Error::Validation(format!("sample {}: {e}", record.id)))?;
    let sample = Sample {
        id: record.id,
        identity: record.identity,
        label,
        category,
        valid: record.valid,
        image,
    };
    sample.validate()?;
    Ok(sample)
}

/// Writes samples as JSONL with inline images. An optional `meta` object is
/// emitted as a header line.
pub fn write_manifest(
    path: impl AsRef<Path>,
    samples: &[Sample],
    meta: Option<&serde_json::Value>,
) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    if let Some(meta) = meta {
        let header = serde_json::json!({ "meta": meta });
        writeln!(out, "{header}").map_err(|e| Error::io(path, e))?;
    }
    for s in samples {
        let line = ManifestLineOut {
            id: &s.id,
            identity: &s.identity,
            label: s.label,
            category: s.category,
            valid: s.valid,
            width: s.width(),
            height: s.height(),
            image: s.image.data(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads an `height × width × 3` raw image stored as little-endian `f32`.
pub fn read_raw_image(path: impl AsRef<Path>, height: usize, width: usize) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = height * width * 3 * 4;
    if bytes.len() != expected {
        return Err(Error::Integrity(format!(
            "{}: raw image has {} bytes, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::new(vec![height, width, 3], data)
}

pub fn write_raw_image(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
