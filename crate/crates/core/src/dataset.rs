//! Line-delimited dataset files.
//!
//! The first line is a JSON header, every following line one JSON sample:
//!
//! ```text
//! {"format":"activelab-dataset","version":1,"feature_dim":2,"labels":["A-line","B-line"],"exclusive_index":0}
//! {"id":"s0001","features":[0.5,-1.25],"truth":"10","split":"pool"}
//! {"id":"s0002","features":[1.0,0.0],"truth":"01","split":"test","image_path":"img/2.png"}
//! ```
//!
//! Floats are written in shortest round-trip form, so saving a loaded file
//! reproduces it byte for byte and the dataset hash is stable.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Dataset, LabelSchema, Sample};

pub const DATASET_FORMAT: &str = "activelab-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub feature_dim: usize,
    pub labels: Vec<String>,
    pub exclusive_index: usize,
}

pub fn write_dataset(dataset: &Dataset) -> String {
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        feature_dim: dataset.feature_dim(),
        labels: dataset.schema().labels().to_vec(),
        exclusive_index: dataset.schema().exclusive_index(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for s in dataset.samples() {
        out.push_str(&serde_json::to_string(s).expect("sample serializes"));
        out.push('\n');
    }
    out
}

pub fn read_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, hraw) = lines.next().ok_or(Error::Empty("dataset"))?;
    let header: DatasetHeader = serde_json::from_str(hraw).map_err(|e| Error::Parse {
        line: hline,
        message: format!("bad header: {e}"),
    })?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(Error::Parse {
            line: hline,
            message: format!(
                "unsupported format {:?} version {}",
                header.format, header.version
            ),
        });
    }
    let schema = LabelSchema::new(header.labels, header.exclusive_index).map_err(|e| {
        Error::Parse {
            line: hline,
            message: e.to_string(),
        }
    })?;
    let mut samples = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (line, raw) in lines {
        let parse_err = |message: String| Error::Parse { line, message };
        let sample: Sample =
            serde_json::from_str(raw).map_err(|e| parse_err(format!("bad record: {e}")))?;
        if sample.features.len() != header.feature_dim {
            return Err(parse_err(format!(
                "sample {:?} has {} features, header says {}",
                sample.id,
                sample.features.len(),
                header.feature_dim
            )));
        }
        if let Some(t) = &sample.truth {
            t.check_len(schema.m()).map_err(|e| parse_err(e.to_string()))?;
        }
        if !seen.insert(sample.id.clone()) {
            return Err(parse_err(format!("duplicate id {:?}", sample.id)));
        }
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    Dataset::new(schema, header.feature_dim, samples)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(&std::fs::read_to_string(path)?)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_dataset(dataset))?;
    Ok(())
}

/// Hex SHA-256 of the serialized dataset.
pub fn dataset_hash(dataset: &Dataset) -> String {
    let digest = Sha256::digest(write_dataset(dataset).as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
