//! Line-delimited JSON dataset files.
//!
//! Line 1 is a header `{"version", "K", "class_names"}`; every further
//! non-blank line is a record `{"id", "logits", "annotations"?, "pi"?}`.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{LabeledExample, LogitDataset};
use crate::error::{Error, Result};
use crate::prob::{AnnotationSet, Distribution, LogitVector};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    #[serde(rename = "K")]
    k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_names: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    logits: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotations: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pi: Option<Vec<f64>>,
}

fn parse_record(rec: Record, k: usize) -> Result<LabeledExample> {
    let id = rec.id;
    let fail = |msg: String| Error::Input(format!("record {id}: {msg}"));
    if rec.logits.len() != k {
        return Err(fail(format!(
            "{} logits, expected K = {k}",
            rec.logits.len()
        )));
    }
    let logits = LogitVector::new(rec.logits).map_err(|e| fail(e.to_string()))?;
    let annotations = rec
        .annotations
        .map(|a| {
            if let Some(l) = a.iter().find(|l| **l >= k) {
                return Err(fail(format!("annotation {l} out of range for K = {k}")));
            }
            AnnotationSet::new(a).map_err(|e| fail(e.to_string()))
        })
        .transpose()?;
    let pi = rec
        .pi
        .map(|p| {
            if p.len() != k {
                return Err(fail(format!(
                    "pi has {} entries, expected K = {k}",
                    p.len()
                )));
            }
            Distribution::new(p).map_err(|e| fail(e.to_string()))
        })
        .transpose()?;
    LabeledExample::new(id.clone(), logits, annotations, pi).map_err(|e| fail(e.to_string()))
}

/// Parses a dataset; `path` is used only in error messages.
pub fn read_dataset(reader: impl BufRead, path: &Path) -> Result<LogitDataset> {
    let load = |line: usize, message: String| Error::Load {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = reader.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| load(1, "file is empty".into()))?;
    let first = first.map_err(|e| Error::io(path, e))?;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| load(1, format!("bad header: {e}")))?;
    if header.version != DATASET_FORMAT_VERSION {
        return Err(load(
            1,
            format!("unsupported format version {}", header.version),
        ));
    }
    let mut examples = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| load(i + 1, e.to_string()))?;
        examples.push(parse_record(rec, header.k).map_err(|e| match e {
            Error::Input(m) => load(i + 1, m),
            other => other,
        })?);
    }
    LogitDataset::new(header.k, examples, header.class_names).map_err(|e| load(0, e.to_string()))
}

pub fn load_dataset(path: &Path) -> Result<LogitDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file), path)
}

/// Writes the dataset; `pi` is stored only for examples without annotations.
pub fn write_dataset(ds: &LogitDataset, mut out: impl Write) -> Result<()> {
    let header = Header {
        version: DATASET_FORMAT_VERSION,
        k: ds.k(),
        class_names: ds.class_names().map(<[String]>::to_vec),
    };
    let io = |e| Error::io("<dataset output>", e);
    writeln!(out, "{}", serde_json::to_string(&header)?).map_err(io)?;
    for e in ds.examples() {
        let rec = Record {
            id: e.id.clone(),
            logits: e.logits.values().to_vec(),
            annotations: e.annotations.as_ref().map(|a| a.labels().to_vec()),
            pi: e.annotations.is_none().then(|| e.pi_hat.probs().to_vec()),
        };
        writeln!(out, "{}", serde_json::to_string(&rec)?).map_err(io)?;
    }
    Ok(())
}

/// Hex sha256 of the file contents.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hex sha256 of the canonical serialization of an in-memory dataset.
pub fn dataset_digest(ds: &LogitDataset) -> String {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf).expect("writing to memory cannot fail");
    hex::encode(Sha256::digest(&buf))
}
