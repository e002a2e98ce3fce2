//! Canonical dataset directory:
//!
//! * `manifest.json` - `{version, dim, backbone_tag, split_tag, count, embedding_file, index_file}`
//! * `samples.jsonl` - one record per sample referencing embedding rows by index
//! * `embeddings.bin` - little-endian binary32, row-major, `dim` floats per row

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, EmbeddingVector, Label, Sample, SplitTag};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const EMBEDDINGS: &str = "embeddings.bin";
const INDEX: &str = "samples.jsonl";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dim: usize,
    backbone_tag: String,
    split_tag: SplitTag,
    count: usize,
    embedding_file: String,
    index_file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    label: Label,
    image_ref: usize,
    text_ref: usize,
    image_evidence_refs: Vec<usize>,
    text_evidence_refs: Vec<usize>,
    /// Row length of the referenced embeddings, when the writer records it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads and validates a dataset directory.
///
/// `split_tag` overrides the tag recorded in the manifest when given.
pub fn load_dataset(dir: impl AsRef<Path>, split_tag: Option<SplitTag>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST);
    let manifest: Manifest = serde_json::from_slice(&read_file(&manifest_path)?).map_err(|e| {
        Error::MalformedRecord {
            id: MANIFEST.into(),
            reason: e.to_string(),
        }
    })?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::MalformedRecord {
            id: MANIFEST.into(),
            reason: format!("unsupported version {}", manifest.version),
        });
    }
    let dim = manifest.dim;
    if dim < 2 {
        return Err(Error::MalformedRecord {
            id: MANIFEST.into(),
            reason: format!("dim must be at least 2, got {dim}"),
        });
    }

    let bytes = read_file(&dir.join(&manifest.embedding_file))?;
    let row_bytes = dim * 4;
    if bytes.len() % row_bytes != 0 {
        return Err(Error::MalformedRecord {
            id: manifest.embedding_file.clone(),
            reason: format!(
                "{} bytes is not a whole number of {dim}-float rows",
                bytes.len()
            ),
        });
    }
    let n_rows = bytes.len() / row_bytes;
    let row = |r: usize| -> Vec<f32> {
        bytes[r * row_bytes..(r + 1) * row_bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    };

    let index_path = dir.join(&manifest.index_file);
    if !index_path.exists() {
        return Err(Error::MissingFile(index_path));
    }
    let reader = BufReader::new(fs::File::open(&index_path).map_err(|e| Error::io(&index_path, e))?);
    let mut samples = Vec::with_capacity(manifest.count);
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&index_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            id: format!("{}:{}", manifest.index_file, lineno + 1),
            reason: e.to_string(),
        })?;
        if let Some(found) = rec.dim {
            if found != dim {
                return Err(Error::DimMismatch { expected: dim, found });
            }
        }
        let fetch = |r: usize| -> Result<EmbeddingVector> {
            if r >= n_rows {
                return Err(Error::MalformedRecord {
                    id: rec.id.clone(),
                    reason: format!("line {}: row {r} out of range ({n_rows} rows)", lineno + 1),
                });
            }
            let values = row(r);
            if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::MalformedRecord {
                    id: rec.id.clone(),
                    reason: format!(
                        "line {}: non-finite value in row {r} at byte offset {}",
                        lineno + 1,
                        r * row_bytes + pos * 4
                    ),
                });
            }
            Ok(EmbeddingVector::from_raw(values))
        };
        let sample = Sample {
            image: fetch(rec.image_ref)?,
            text: fetch(rec.text_ref)?,
            image_evidence: rec.image_evidence_refs.iter().map(|&r| fetch(r)).collect::<Result<_>>()?,
            text_evidence: rec.text_evidence_refs.iter().map(|&r| fetch(r)).collect::<Result<_>>()?,
            id: rec.id,
            label: rec.label,
        };
        samples.push(sample);
    }
    if samples.len() != manifest.count {
        return Err(Error::MalformedRecord {
            id: MANIFEST.into(),
            reason: format!("count {} but {} records", manifest.count, samples.len()),
        });
    }
    Dataset::new(
        samples,
        split_tag.unwrap_or(manifest.split_tag),
        manifest.backbone_tag,
    )
}

/// Writes `dataset` in the canonical format, creating `dir` if needed.
///
/// Rows are laid out sample by sample: image, text, image evidence, text
/// evidence. Values are written bit-exactly.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    if dataset.is_empty() {
        return Err(Error::InvalidDataset("refusing to write an empty dataset".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dim = dataset.dim();

    let emb_path = dir.join(EMBEDDINGS);
    let idx_path = dir.join(INDEX);
    let mut emb = BufWriter::new(fs::File::create(&emb_path).map_err(|e| Error::io(&emb_path, e))?);
    let mut idx = BufWriter::new(fs::File::create(&idx_path).map_err(|e| Error::io(&idx_path, e))?);

    let mut next_row = 0usize;
    let mut put = |e: &EmbeddingVector| -> Result<usize> {
        for v in e.values() {
            emb.write_all(&v.to_le_bytes()).map_err(|err| Error::io(&emb_path, err))?;
        }
        next_row += 1;
        Ok(next_row - 1)
    };
    for s in dataset.samples() {
        let rec = Record {
            id: s.id.clone(),
            label: s.label,
            image_ref: put(&s.image)?,
            text_ref: put(&s.text)?,
            image_evidence_refs: s.image_evidence.iter().map(&mut put).collect::<Result<_>>()?,
            text_evidence_refs: s.text_evidence.iter().map(&mut put).collect::<Result<_>>()?,
            dim: Some(dim),
        };
        serde_json::to_writer(&mut idx, &rec)?;
        idx.write_all(b"\n").map_err(|e| Error::io(&idx_path, e))?;
    }
    emb.flush().map_err(|e| Error::io(&emb_path, e))?;
    idx.flush().map_err(|e| Error::io(&idx_path, e))?;

    let manifest = Manifest {
        version: FORMAT_VERSION,
        dim,
        backbone_tag: dataset.backbone_tag.clone(),
        split_tag: dataset.split_tag,
        count: dataset.len(),
        embedding_file: EMBEDDINGS.into(),
        index_file: INDEX.into(),
    };
    let manifest_path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))
}
