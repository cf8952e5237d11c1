use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Sample};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"EALN";
pub const EMBEDDING_FORMAT_VERSION: u32 = 1;

const MANIFEST_FILE: &str = "manifest.json";
const EMBEDDINGS_FILE: &str = "embeddings.bin";
const ANNOTATIONS_FILE: &str = "annotations.jsonl";

/// Dataset manifest. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub embedding_dim: usize,
    pub embeddings_path: PathBuf,
    pub annotations_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRow {
    pub id: String,
    pub counts: Vec<u32>,
}

/// Writes records in the binary embedding layout:
/// magic, version u32, count u64, dim u32, then per record
/// `[id_len u16][id utf-8][dim x f32]`, all little-endian.
pub fn write_embeddings<'a, I>(path: &Path, dim: usize, records: I) -> Result<()>
where
    I: ExactSizeIterator<Item = (&'a str, &'a [f32])>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let dim32 = u32::try_from(dim).map_err(|_| Error::invalid("embedding_dim exceeds u32"))?;
    let mut buf = Vec::with_capacity(20);
    buf.extend_from_slice(&EMBEDDING_MAGIC);
    buf.extend_from_slice(&EMBEDDING_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
    buf.extend_from_slice(&dim32.to_le_bytes());
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    for (id, emb) in records {
        if emb.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "embedding length",
                expected: dim,
                found: emb.len(),
            });
        }
        let id_len = u16::try_from(id.len())
            .map_err(|_| Error::invalid(format!("sample id longer than 65535 bytes: {id:?}")))?;
        buf.clear();
        buf.extend_from_slice(&id_len.to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
        for v in emb {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an embedding file, returning its dimension and records in file order.
pub fn read_embeddings(path: &Path) -> Result<(usize, Vec<(String, Vec<f32>)>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let truncated = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(format!("{}: truncated embedding file", path.display()))
        } else {
            Error::io(path, e)
        }
    };

    let mut header = [0u8; 20];
    r.read_exact(&mut header).map_err(truncated)?;
    if header[..4] != EMBEDDING_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic bytes {:?}",
            path.display(),
            &header[..4]
        )));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != EMBEDDING_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported format version {version}",
            path.display()
        )));
    }
    let count = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let dim = u32::from_le_bytes(header[16..20].try_into().unwrap()) as usize;

    let mut records = Vec::new();
    let mut len_buf = [0u8; 2];
    let mut vec_buf = vec![0u8; dim * 4];
    for _ in 0..count {
        r.read_exact(&mut len_buf).map_err(truncated)?;
        let mut id = vec![0u8; u16::from_le_bytes(len_buf) as usize];
        r.read_exact(&mut id).map_err(truncated)?;
        let id = String::from_utf8(id)
            .map_err(|_| Error::Format(format!("{}: sample id is not UTF-8", path.display())))?;
        r.read_exact(&mut vec_buf).map_err(truncated)?;
        let emb = vec_buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        records.push((id, emb));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Format(format!(
            "{}: trailing bytes after {count} records",
            path.display()
        )));
    }
    Ok((dim, records))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    if manifest.class_names.len() != manifest.num_classes {
        return Err(Error::DimensionMismatch {
            what: "manifest class_names length",
            expected: manifest.num_classes,
            found: manifest.class_names.len(),
        });
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let emb_path = resolve(base, &manifest.embeddings_path);
    let ann_path = resolve(base, &manifest.annotations_path);

    let (dim, records) = read_embeddings(&emb_path)?;
    if dim != manifest.embedding_dim {
        return Err(Error::DimensionMismatch {
            what: "embedding file dimension vs manifest",
            expected: manifest.embedding_dim,
            found: dim,
        });
    }
    let mut by_id: HashMap<String, Vec<f32>> = HashMap::with_capacity(records.len());
    for (id, emb) in records {
        if by_id.insert(id.clone(), emb).is_some() {
            return Err(Error::Format(format!(
                "{}: duplicate id {id:?}",
                emb_path.display()
            )));
        }
    }

    let file = File::open(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let mut samples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&ann_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: AnnotationRow = serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("{}:{}: {e}", ann_path.display(), lineno + 1))
        })?;
        let embedding = by_id.remove(&row.id).ok_or_else(|| {
            Error::invalid(format!(
                "annotation id {:?} has no embedding (or appears twice)",
                row.id
            ))
        })?;
        samples.push(Sample {
            id: row.id,
            embedding,
            counts: row.counts,
        });
    }
    Dataset::new(
        manifest.name,
        manifest.class_names,
        manifest.embedding_dim,
        samples,
    )
}

/// Writes `manifest.json`, `embeddings.bin` and `annotations.jsonl` into
/// `dir` and returns the manifest path.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let emb_path = dir.join(EMBEDDINGS_FILE);
    write_embeddings(
        &emb_path,
        dataset.embedding_dim(),
        dataset
            .samples()
            .iter()
            .map(|s| (s.id.as_str(), s.embedding.as_slice())),
    )?;

    let ann_path = dir.join(ANNOTATIONS_FILE);
    let file = File::create(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let mut w = BufWriter::new(file);
    for s in dataset.samples() {
        let row = AnnotationRow {
            id: s.id.clone(),
            counts: s.counts.clone(),
        };
        let line = serde_json::to_string(&row).expect("annotation rows always serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(&ann_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&ann_path, e))?;

    let manifest = Manifest {
        name: dataset.name().to_string(),
        num_classes: dataset.num_classes(),
        class_names: dataset.class_names().to_vec(),
        embedding_dim: dataset.embedding_dim(),
        embeddings_path: PathBuf::from(EMBEDDINGS_FILE),
        annotations_path: PathBuf::from(ANNOTATIONS_FILE),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest always serializes");
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}
