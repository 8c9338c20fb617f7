//! On-disk index layout.
//!
//! An index directory holds two files:
//!
//! ```text
//! vectors.bin
//!   offset  size  field
//!   0       4     magic "SFIX"
//!   4       4     version (u32 LE, currently 1)
//!   8       4     count   (u32 LE, number of rows)
//!   12      4     dim     (u32 LE)
//!   16      ...   count × dim f32 LE, row-major
//!
//! manifest.json
//!   {"version": 1, "embedder": {...}, "rows": [{"row": 0, "record_id": "...", "flat_text": "..."}, ...]}
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embed::EmbedderSpec;
use super::flat::{FlatIndex, IndexRow};
use super::IndexError;

pub const MAGIC: [u8; 4] = *b"SFIX";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;
pub const VECTORS_FILE: &str = "vectors.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlobHeader {
    pub version: u32,
    pub count: u32,
    pub dim: u32,
}

impl BlobHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..8].copy_from_slice(&self.version.to_le_bytes());
        out[8..12].copy_from_slice(&self.count.to_le_bytes());
        out[12..16].copy_from_slice(&self.dim.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, IndexError> {
        if bytes.len() < HEADER_LEN {
            return Err(IndexError::Corrupt(format!(
                "header needs {HEADER_LEN} bytes, found {}",
                bytes.len()
            )));
        }
        if bytes[0..4] != MAGIC {
            return Err(IndexError::Corrupt("bad magic".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let header = Self {
            version: word(4),
            count: word(8),
            dim: word(12),
        };
        if header.version != FORMAT_VERSION {
            return Err(IndexError::Corrupt(format!(
                "unsupported version {}",
                header.version
            )));
        }
        Ok(header)
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestRow {
    row: usize,
    record_id: String,
    flat_text: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    embedder: EmbedderSpec,
    rows: Vec<ManifestRow>,
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> IndexError + '_ {
    move |e| IndexError::Io(format!("{}: {e}", path.display()))
}

pub fn save(index: &FlatIndex, dir: &Path) -> Result<(), IndexError> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let count = u32::try_from(index.len())
        .map_err(|_| IndexError::Format("too many rows for a u32 count".into()))?;
    let dim = u32::try_from(index.dimension())
        .map_err(|_| IndexError::Format("dimension exceeds u32".into()))?;

    let blob_path = dir.join(VECTORS_FILE);
    let mut writer = BufWriter::new(File::create(&blob_path).map_err(io(&blob_path))?);
    let header = BlobHeader {
        version: FORMAT_VERSION,
        count,
        dim,
    };
    writer.write_all(&header.encode()).map_err(io(&blob_path))?;
    for x in index.raw_vectors() {
        writer.write_all(&x.to_le_bytes()).map_err(io(&blob_path))?;
    }
    writer.flush().map_err(io(&blob_path))?;

    let manifest = Manifest {
        version: FORMAT_VERSION,
        embedder: index.embedder().clone(),
        rows: index
            .rows()
            .iter()
            .enumerate()
            .map(|(row, r)| ManifestRow {
                row,
                record_id: r.record_id.clone(),
                flat_text: r.flat_text.clone(),
            })
            .collect(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| IndexError::Format(e.to_string()))?;
    std::fs::write(&manifest_path, body).map_err(io(&manifest_path))?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<FlatIndex, IndexError> {
    let blob_path = dir.join(VECTORS_FILE);
    let mut bytes = Vec::new();
    File::open(&blob_path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io(&blob_path))?;
    let header = BlobHeader::decode(&bytes)?;
    let expected_len = HEADER_LEN + header.count as usize * header.dim as usize * 4;
    if bytes.len() != expected_len {
        return Err(IndexError::Corrupt(format!(
            "vector blob is {} bytes, header implies {expected_len}",
            bytes.len()
        )));
    }
    let vectors: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();

    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(io(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| IndexError::Corrupt(format!("{}: {e}", manifest_path.display())))?;
    if manifest.embedder.dimension() != header.dim as usize {
        return Err(IndexError::Corrupt(format!(
            "manifest embedder dimension {} != blob dimension {}",
            manifest.embedder.dimension(),
            header.dim
        )));
    }
    if manifest.rows.len() != header.count as usize {
        return Err(IndexError::Corrupt(format!(
            "manifest has {} rows, blob has {}",
            manifest.rows.len(),
            header.count
        )));
    }
    let mut rows = Vec::with_capacity(manifest.rows.len());
    for (i, row) in manifest.rows.into_iter().enumerate() {
        if row.row != i {
            return Err(IndexError::Corrupt(format!("manifest row {i} is labeled {}", row.row)));
        }
        rows.push(IndexRow {
            record_id: row.record_id,
            flat_text: row.flat_text,
        });
    }
    Ok(FlatIndex::from_parts(manifest.embedder, vectors, rows))
}
