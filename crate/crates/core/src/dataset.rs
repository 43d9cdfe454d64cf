//! Ground-truth manifest loading, stratified splitting and malware merging.
//!
//! Manifests are JSON-lines: one [`AppRecord`] object per line, UTF-8.
//! Blank lines are ignored.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("duplicate app_id `{0}`")]
    DuplicateId(String),
    #[error("class `{class}` has {count} record(s); at least 2 are required to split")]
    ClassTooSmall { class: String, count: usize },
    #[error("train fraction {0} is outside (0, 1)")]
    BadFraction(f64),
    #[error("record `{0}` has no class label")]
    Unlabelled(String),
    #[error("app_id `{0}` appears in both the benign and the malware set")]
    IdCollision(String),
    #[error("malware record `{0}` is not flagged is_malicious")]
    NotMalicious(String),
    #[error("unknown app_id `{0}`")]
    UnknownId(String),
    #[error("split file: {0}")]
    SplitFormat(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// One app of the ground truth (or of the malware augmentation set).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppRecord {
    pub app_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_label: Option<String>,
    #[serde(default)]
    pub gplay_category_id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apk_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    #[serde(default)]
    pub is_malicious: bool,
}

/// Ordered list of records plus the derived set of class labels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    records: Vec<AppRecord>,
    class_set: BTreeSet<String>,
}

impl Manifest {
    /// Builds a manifest, rejecting duplicate ids and unlabelled benign rows.
    pub fn from_records(records: Vec<AppRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        let mut class_set = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.app_id.as_str()) {
                return Err(DatasetError::DuplicateId(r.app_id.clone()));
            }
            match &r.class_label {
                Some(label) => {
                    class_set.insert(label.clone());
                }
                None if !r.is_malicious => return Err(DatasetError::Unlabelled(r.app_id.clone())),
                None => {}
            }
        }
        Ok(Self { records, class_set })
    }

    pub fn records(&self) -> &[AppRecord] {
        &self.records
    }

    pub fn class_set(&self) -> &BTreeSet<String> {
        &self.class_set
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, app_id: &str) -> Option<&AppRecord> {
        self.records.iter().find(|r| r.app_id == app_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.app_id.as_str())
    }

    /// Record count per class label; unlabelled rows are not counted.
    pub fn class_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            if let Some(label) = &r.class_label {
                *counts.entry(label.as_str()).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Sub-manifest holding the given ids, in this manifest's order.
    pub fn subset<'a, I>(&self, ids: I) -> Result<Manifest>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let wanted: HashSet<&str> = ids.into_iter().collect();
        let present: HashSet<&str> = self.ids().collect();
        if let Some(missing) = wanted.iter().find(|id| !present.contains(**id)) {
            return Err(DatasetError::UnknownId(missing.to_string()));
        }
        let records = self
            .records
            .iter()
            .filter(|r| wanted.contains(r.app_id.as_str()))
            .cloned()
            .collect();
        Manifest::from_records(records)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let io_err = |source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut out, r).expect("AppRecord serializes");
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(io_err)?;
        f.write_all(&out).map_err(io_err)
    }
}

/// Loads a JSON-lines manifest, preserving file order.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    parse_manifest(BufReader::new(file)).map_err(|e| match e {
        DatasetError::Io { source, .. } => io_err(source),
        other => other,
    })
}

/// Parses JSON-lines manifest text from any reader.
pub fn parse_manifest<R: BufRead>(reader: R) -> Result<Manifest> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| DatasetError::Io {
            path: PathBuf::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let obj = value.as_object().ok_or_else(|| DatasetError::Parse {
            line: line_no,
            message: "expected a JSON object".into(),
        })?;
        match obj.get("app_id") {
            Some(serde_json::Value::String(s)) if !s.is_empty() => {}
            _ => {
                return Err(DatasetError::MissingField {
                    line: line_no,
                    field: "app_id",
                })
            }
        }
        let record: AppRecord =
            serde_json::from_value(value).map_err(|e| DatasetError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let labelled = record.class_label.as_deref().is_some_and(|l| !l.is_empty());
        if !labelled && !record.is_malicious {
            return Err(DatasetError::MissingField {
                line: line_no,
                field: "class_label",
            });
        }
        if !seen.insert(record.app_id.clone()) {
            return Err(DatasetError::DuplicateId(record.app_id));
        }
        records.push(record);
    }
    Manifest::from_records(records)
}

/// Disjoint train/test assignment of app ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub train_fraction: f64,
}

impl Split {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("Split serializes");
        fs::write(path, text + "\n").map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Split> {
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| DatasetError::SplitFormat(e.to_string()))
    }
}

/// Per-class train count: `ceil(fraction * size)`, kept inside `1..size`.
pub fn train_count(class_size: usize, fraction: f64) -> usize {
    // Guard against 0.9 * 100 landing a hair above 90.
    let raw = (fraction * class_size as f64 - 1e-9).ceil().max(0.0) as usize;
    raw.clamp(1, class_size.saturating_sub(1).max(1))
}

/// Stratified seeded split. Each class is shuffled independently by one
/// ChaCha8 stream (classes visited in sorted label order); train and test
/// lists come back in manifest order.
pub fn stratified_split(manifest: &Manifest, train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::BadFraction(train_fraction));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        let label = r
            .class_label
            .as_deref()
            .ok_or_else(|| DatasetError::Unlabelled(r.app_id.clone()))?;
        by_class.entry(label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; manifest.len()];
    for (class, mut members) in by_class {
        if members.len() < 2 {
            return Err(DatasetError::ClassTooSmall {
                class: class.to_string(),
                count: members.len(),
            });
        }
        let n_train = train_count(members.len(), train_fraction);
        members.shuffle(&mut rng);
        for &i in &members[..n_train] {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, t) in manifest.records.iter().zip(in_train) {
        if t {
            train.push(r.app_id.clone());
        } else {
            test.push(r.app_id.clone());
        }
    }
    Ok(Split {
        train,
        test,
        seed,
        train_fraction,
    })
}

/// Combined test set: held-out benign records followed by malware records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedTestSet {
    pub manifest: Manifest,
    pub benign: usize,
    pub malicious: usize,
}

pub fn merge_malware(
    benign: &Manifest,
    test_ids: &[String],
    malware: &Manifest,
) -> Result<MergedTestSet> {
    let test = benign.subset(test_ids.iter().map(String::as_str))?;
    let test_set: HashSet<&str> = test.ids().collect();
    for r in malware.records() {
        if !r.is_malicious {
            return Err(DatasetError::NotMalicious(r.app_id.clone()));
        }
        if test_set.contains(r.app_id.as_str()) || benign.get(&r.app_id).is_some() {
            return Err(DatasetError::IdCollision(r.app_id.clone()));
        }
    }
    let benign_count = test.len();
    let mut records = test.records;
    records.extend(malware.records().iter().cloned());
    Ok(MergedTestSet {
        manifest: Manifest::from_records(records)?,
        benign: benign_count,
        malicious: malware.len(),
    })
}
