//! Domain types shared by every stage of the loop: the label vocabulary,
//! label combinations, samples, probability rows and the pool partition.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Ordered label vocabulary with one mutually exclusive "healthy" label.
///
/// The exclusive label is the one the margin strategy compares against all
/// the others, and the one the synthetic generator never combines with any
/// other label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    labels: Vec<String>,
    exclusive_index: usize,
}

impl LabelSchema {
    pub fn new<S: Into<String>>(
        labels: impl IntoIterator<Item = S>,
        exclusive_index: usize,
    ) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(Error::InvalidSchema(format!(
                "need at least 2 labels, got {}",
                labels.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for name in &labels {
            if name.trim().is_empty() {
                return Err(Error::InvalidSchema("empty label name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate label {name:?}")));
            }
        }
        if exclusive_index >= labels.len() {
            return Err(Error::InvalidSchema(format!(
                "exclusive index {exclusive_index} out of range for {} labels",
                labels.len()
            )));
        }
        Ok(Self {
            labels,
            exclusive_index,
        })
    }

    /// The four-label lung ultrasound vocabulary, A-line first.
    pub fn lung_ultrasound() -> Self {
        Self::new(["A-line", "B-line", "P-lesion", "P-effusion"], 0)
            .expect("static schema is valid")
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Number of labels.
    pub fn m(&self) -> usize {
        self.labels.len()
    }

    pub fn exclusive_index(&self) -> usize {
        self.exclusive_index
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }
}

/// One bit per label, in schema order. Displays as `"0101"`.
///
/// Ordering is lexicographic over the bits, which coincides with the ordering
/// of the string forms.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelCombination(Vec<bool>);

impl LabelCombination {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![false; m])
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        Self(bits.iter().map(|&b| b != 0).collect())
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    /// Number of positive labels.
    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn encode(&self) -> String {
        encode_combination(self)
    }

    /// Bits as 0.0 / 1.0, the form used as training targets.
    pub fn as_targets(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 })
    }

    pub fn check_len(&self, m: usize) -> Result<()> {
        if self.0.len() != m {
            return Err(Error::CombinationLength {
                found: self.encode(),
                len: self.0.len(),
                expected: m,
            });
        }
        Ok(())
    }
}

pub fn encode_combination(bits: &LabelCombination) -> String {
    bits.0.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

pub fn decode_combination(s: &str, schema: &LabelSchema) -> Result<LabelCombination> {
    let combo: LabelCombination = s.parse()?;
    combo.check_len(schema.m())?;
    Ok(combo)
}

impl FromStr for LabelCombination {
    type Err = Error;

    /// Parses a string of `'0'`/`'1'` without checking it against a schema.
    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|ch| match ch {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::CombinationChar {
                    found: s.to_string(),
                    ch: other,
                }),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

impl fmt::Display for LabelCombination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

impl Serialize for LabelCombination {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.encode())
    }
}

impl<'de> Deserialize<'de> for LabelCombination {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Pool,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<LabelCombination>,
    #[serde(default)]
    pub split: Split,
    /// Passed through untouched for UI thumbnails.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
}

impl Sample {
    pub fn new(id: impl Into<String>, features: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            features,
            truth: None,
            split: Split::Pool,
            image_path: None,
        }
    }

    pub fn with_truth(mut self, truth: LabelCombination) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }
}

/// A validated collection of samples sharing one schema and feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: LabelSchema,
    feature_dim: usize,
    samples: Vec<Sample>,
    index: BTreeMap<String, usize>,
}

impl Dataset {
    pub fn new(schema: LabelSchema, feature_dim: usize, samples: Vec<Sample>) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::InvalidConfig("feature_dim must be at least 1".into()));
        }
        let mut index = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    got: s.features.len(),
                });
            }
            if let Some(t) = &s.truth {
                t.check_len(schema.m())?;
            }
            if index.insert(s.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(s.id.clone()));
            }
        }
        Ok(Self {
            schema,
            feature_dim,
            samples,
            index,
        })
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.index.get(id).map(|&i| &self.samples[i])
    }

    pub fn require(&self, id: &str) -> Result<&Sample> {
        self.get(id).ok_or_else(|| Error::UnknownSample(id.to_string()))
    }

    pub fn split_ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.samples
            .iter()
            .filter(move |s| s.split == split)
            .map(|s| s.id.as_str())
    }
}

/// Independent per-label probabilities for one sample. Entries need not sum
/// to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        for (index, &value) in p.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::ProbabilityRange { index, value });
            }
        }
        Ok(Self(p))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl<'de> Deserialize<'de> for ProbabilityVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let p = Vec::<f64>::deserialize(deserializer)?;
        Self::new(p).map_err(serde::de::Error::custom)
    }
}

/// Prediction probabilities for every sample of the candidate pool at one
/// iteration, rows aligned with `ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    ids: Vec<String>,
    rows: Vec<ProbabilityVector>,
    pub iteration: usize,
}

impl StateMatrix {
    pub fn new(ids: Vec<String>, rows: Vec<ProbabilityVector>, iteration: usize) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                got: rows.len(),
            });
        }
        if let Some(first) = rows.first() {
            let m = first.len();
            if let Some(bad) = rows.iter().find(|r| r.len() != m) {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: bad.len(),
                });
            }
        }
        let mut seen = BTreeSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            ids,
            rows,
            iteration,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &[ProbabilityVector] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ProbabilityVector)> {
        self.ids.iter().map(String::as_str).zip(self.rows.iter())
    }

    pub fn row(&self, id: &str) -> Option<&ProbabilityVector> {
        self.ids.iter().position(|i| i == id).map(|i| &self.rows[i])
    }
}

/// Candidate pool, labeled set and held-out test set.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PoolPartition {
    candidate: BTreeSet<String>,
    labeled: BTreeMap<String, LabelCombination>,
    test: BTreeSet<String>,
}

impl PoolPartition {
    pub fn new(
        candidate: BTreeSet<String>,
        labeled: BTreeMap<String, LabelCombination>,
        test: BTreeSet<String>,
    ) -> Result<Self> {
        for id in labeled.keys() {
            if candidate.contains(id) || test.contains(id) {
                return Err(Error::InvalidSplit(format!("{id:?} is in more than one set")));
            }
        }
        if let Some(id) = candidate.intersection(&test).next() {
            return Err(Error::InvalidSplit(format!("{id:?} is in more than one set")));
        }
        Ok(Self {
            candidate,
            labeled,
            test,
        })
    }

    /// Candidate pool from the `pool` records, test set from the `test`
    /// records, nothing labeled.
    pub fn from_dataset(dataset: &Dataset) -> Result<Self> {
        let candidate: BTreeSet<String> =
            dataset.split_ids(Split::Pool).map(String::from).collect();
        let test: BTreeSet<String> = dataset.split_ids(Split::Test).map(String::from).collect();
        if candidate.is_empty() {
            return Err(Error::InvalidSplit("no pool samples".into()));
        }
        if test.is_empty() {
            return Err(Error::InvalidSplit("no test samples".into()));
        }
        Self::new(candidate, BTreeMap::new(), test)
    }

    pub fn candidate(&self) -> &BTreeSet<String> {
        &self.candidate
    }

    pub fn labeled(&self) -> &BTreeMap<String, LabelCombination> {
        &self.labeled
    }

    pub fn test(&self) -> &BTreeSet<String> {
        &self.test
    }

    /// Moves annotated samples from the candidate pool to the labeled set.
    pub fn commit_annotations(&self, annotated: &[(String, LabelCombination)]) -> Result<Self> {
        let mut batch = BTreeSet::new();
        for (id, _) in annotated {
            if !batch.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
            if !self.candidate.contains(id) {
                return Err(Error::NotInCandidatePool(id.clone()));
            }
        }
        let mut next = self.clone();
        for (id, combo) in annotated {
            next.candidate.remove(id);
            next.labeled.insert(id.clone(), combo.clone());
        }
        Ok(next)
    }
}
