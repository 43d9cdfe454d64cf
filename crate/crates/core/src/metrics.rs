//! Extrinsic clustering agreement (contingency table, ARI) and
//! detection metrics for the anomaly-detection task.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("partitions cover different elements (only in left: {only_left:?}, only in right: {only_right:?})")]
    ElementMismatch {
        only_left: Vec<String>,
        only_right: Vec<String>,
    },
    #[error("ARI needs at least 2 elements, got {0}")]
    TooFewElements(usize),
    #[error("element `{0}` assigned twice")]
    DuplicateElement(String),
    #[error("{0} is undefined: zero denominator")]
    UndefinedRate(&'static str),
    #[error("pair-count arithmetic overflowed")]
    Overflow,
    #[error("partition csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Assignment of each element to one opaque cluster label.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Partition {
    assignments: BTreeMap<String, String>,
}

impl Partition {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, A, B>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut p = Self::new();
        for (id, cluster) in pairs {
            p.insert(id.into(), cluster.into())?;
        }
        Ok(p)
    }

    /// Builds a partition from explicit blocks, labelling them `0..`.
    pub fn from_blocks(blocks: &[&[&str]]) -> Result<Self> {
        let mut p = Self::new();
        for (c, block) in blocks.iter().enumerate() {
            for id in *block {
                p.insert(id.to_string(), c.to_string())?;
            }
        }
        Ok(p)
    }

    pub fn insert(&mut self, id: String, cluster: String) -> Result<()> {
        if self.assignments.contains_key(&id) {
            return Err(MetricsError::DuplicateElement(id));
        }
        self.assignments.insert(id, cluster);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn cluster_of(&self, id: &str) -> Option<&str> {
        self.assignments.get(id).map(String::as_str)
    }

    /// `(app_id, cluster_id)` pairs in app_id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.assignments.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    pub fn clusters(&self) -> BTreeSet<&str> {
        self.assignments.values().map(String::as_str).collect()
    }

    /// Restriction to the given elements (silently skipping unknown ones).
    pub fn restrict<'a, I: IntoIterator<Item = &'a str>>(&self, ids: I) -> Partition {
        let assignments = ids
            .into_iter()
            .filter_map(|id| self.assignments.get_key_value(id))
            .map(|(a, b)| (a.clone(), b.clone()))
            .collect();
        Partition { assignments }
    }

    /// Two-column CSV with header `app_id,cluster_id`, rows in app_id order.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["app_id", "cluster_id"]).expect("in-memory write");
        for (a, b) in self.iter() {
            w.write_record([a, b]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers().map_err(|e| MetricsError::Csv(e.to_string()))?;
        if headers.len() < 2 || &headers[0] != "app_id" || &headers[1] != "cluster_id" {
            return Err(MetricsError::Csv("expected header `app_id,cluster_id`".into()));
        }
        let mut p = Partition::new();
        for row in r.records() {
            let row = row.map_err(|e| MetricsError::Csv(e.to_string()))?;
            p.insert(row[0].to_string(), row[1].to_string())?;
        }
        Ok(p)
    }

    pub fn save_csv(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.to_csv())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| MetricsError::Csv(format!("{}: {e}", path.display())))?;
        Self::from_csv(&text)
    }
}

/// Intersection counts between the blocks of two partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// Row-major `rows x cols`.
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub n: u64,
}

impl ContingencyTable {
    /// True when every row and every column has exactly one non-zero cell,
    /// i.e. the two partitions are equal up to relabelling.
    pub fn is_bijective(&self) -> bool {
        let row_ok = self
            .counts
            .iter()
            .all(|r| r.iter().filter(|&&c| c > 0).count() == 1);
        let col_ok = (0..self.col_labels.len())
            .all(|j| self.counts.iter().filter(|r| r[j] > 0).count() == 1);
        row_ok && col_ok
    }
}

fn check_same_elements(x: &Partition, y: &Partition) -> Result<()> {
    if x.assignments.len() == y.assignments.len()
        && x.assignments.keys().eq(y.assignments.keys())
    {
        return Ok(());
    }
    let only_left = x
        .assignments
        .keys()
        .filter(|k| !y.assignments.contains_key(*k))
        .cloned()
        .collect();
    let only_right = y
        .assignments
        .keys()
        .filter(|k| !x.assignments.contains_key(*k))
        .cloned()
        .collect();
    Err(MetricsError::ElementMismatch {
        only_left,
        only_right,
    })
}

pub fn contingency_table(x: &Partition, y: &Partition) -> Result<ContingencyTable> {
    check_same_elements(x, y)?;
    let row_labels: Vec<String> = x.clusters().into_iter().map(String::from).collect();
    let col_labels: Vec<String> = y.clusters().into_iter().map(String::from).collect();
    let row_index: BTreeMap<&str, usize> =
        row_labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let col_index: BTreeMap<&str, usize> =
        col_labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();

    let mut counts = vec![vec![0u64; col_labels.len()]; row_labels.len()];
    for (id, cx) in x.iter() {
        let cy = y.cluster_of(id).expect("element sets checked");
        counts[row_index[cx]][col_index[cy]] += 1;
    }
    let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
    let col_sums = (0..col_labels.len())
        .map(|j| counts.iter().map(|r| r[j]).sum())
        .collect();
    Ok(ContingencyTable {
        row_labels,
        col_labels,
        counts,
        row_sums,
        col_sums,
        n: x.len() as u64,
    })
}

fn choose2(k: u64) -> i128 {
    let k = k as i128;
    k * (k - 1) / 2
}

/// Integer pair counts used by the ARI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PairCounts {
    /// Σ C(n_ij, 2)
    pub index: i128,
    /// Σ C(a_i, 2)
    pub rows: i128,
    /// Σ C(b_j, 2)
    pub cols: i128,
    /// C(n, 2)
    pub total: i128,
}

impl PairCounts {
    pub(crate) fn of(table: &ContingencyTable) -> Self {
        Self {
            index: table.counts.iter().flatten().map(|&c| choose2(c)).sum(),
            rows: table.row_sums.iter().map(|&c| choose2(c)).sum(),
            cols: table.col_sums.iter().map(|&c| choose2(c)).sum(),
            total: choose2(table.n),
        }
    }

    /// Rand index: fraction of element pairs on which both partitions agree.
    #[allow(dead_code)]
    pub(crate) fn rand_index(&self) -> f64 {
        let agree = self.total + 2 * self.index - self.rows - self.cols;
        agree as f64 / self.total as f64
    }
}

/// ARI as an exact rational. Degenerate tables (zero denominator) give 1
/// when the partitions coincide up to relabelling and 0 otherwise.
pub fn adjusted_rand_index_exact(x: &Partition, y: &Partition) -> Result<Ratio<i128>> {
    let table = contingency_table(x, y)?;
    if table.n < 2 {
        return Err(MetricsError::TooFewElements(table.n as usize));
    }
    let p = PairCounts::of(&table);
    // Both sides of the quotient multiplied through by 2 * C(n, 2).
    let prod = p.rows.checked_mul(p.cols).ok_or(MetricsError::Overflow)?;
    let num = p
        .index
        .checked_mul(p.total)
        .and_then(|v| v.checked_sub(prod))
        .and_then(|v| v.checked_mul(2))
        .ok_or(MetricsError::Overflow)?;
    let den = (p.rows + p.cols)
        .checked_mul(p.total)
        .and_then(|v| v.checked_sub(2 * prod))
        .ok_or(MetricsError::Overflow)?;
    if den == 0 {
        let v = if table.is_bijective() { 1 } else { 0 };
        return Ok(Ratio::from_integer(v));
    }
    Ok(Ratio::new(num, den))
}

/// Adjusted Rand Index in `[-1, 1]`; a single floating division of exact
/// integer pair-count expressions.
pub fn adjusted_rand_index(x: &Partition, y: &Partition) -> Result<f64> {
    let r = adjusted_rand_index_exact(x, y)?;
    Ok(*r.numer() as f64 / *r.denom() as f64)
}

/// Confusion counts where "positive" means flagged as an anomaly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl DetectionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    /// Tallies one scored app.
    pub fn record(&mut self, is_malicious: bool, flagged: bool) {
        match (is_malicious, flagged) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    /// `TP / (TP + (FP + FN) / 2)`, `None` when the denominator is zero.
    pub fn f1(&self) -> Option<f64> {
        let den = self.tp as f64 + 0.5 * (self.fp + self.fn_) as f64;
        (den > 0.0).then(|| self.tp as f64 / den)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRates {
    pub tpr: f64,
    pub fpr: f64,
    pub tnr: f64,
    pub fnr: f64,
    pub f1: f64,
}

pub fn detection_metrics(c: &DetectionCounts) -> Result<DetectionRates> {
    if c.positives() == 0 {
        return Err(MetricsError::UndefinedRate("TP rate"));
    }
    if c.negatives() == 0 {
        return Err(MetricsError::UndefinedRate("FP rate"));
    }
    let tpr = c.tp as f64 / c.positives() as f64;
    let fpr = c.fp as f64 / c.negatives() as f64;
    Ok(DetectionRates {
        tpr,
        fpr,
        tnr: c.tn as f64 / c.negatives() as f64,
        fnr: c.fn_ as f64 / c.positives() as f64,
        f1: c.f1().ok_or(MetricsError::UndefinedRate("F1"))?,
    })
}
