use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use appcat_core::metrics::DetectionCounts;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::store::{to_json, write_file};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AriScore {
    pub configuration: String,
    /// What the partition was compared with.
    pub reference: String,
    pub ari: f64,
    pub n_apps: usize,
}

/// Detection counts with every rate that is defined for them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub counts: DetectionCounts,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub tnr: Option<f64>,
    pub fnr: Option<f64>,
    /// 0 when undefined (no true positives and no errors).
    pub f1: f64,
}

impl DetectionSummary {
    pub fn from_counts(counts: DetectionCounts, warnings: &mut Vec<String>) -> Self {
        let rate = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        if counts.positives() == 0 {
            warnings.push("no malicious apps in the test set: TP and FN rates are undefined".into());
        }
        if counts.negatives() == 0 {
            warnings.push("no benign apps in the test set: FP and TN rates are undefined".into());
        }
        let f1 = counts.f1().unwrap_or_else(|| {
            warnings.push("F1 is undefined (no positives flagged or present); reported as 0".into());
            0.0
        });
        Self {
            counts,
            tpr: rate(counts.tp, counts.positives()),
            fpr: rate(counts.fp, counts.negatives()),
            tnr: rate(counts.tn, counts.negatives()),
            fnr: rate(counts.fn_, counts.positives()),
            f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub cluster: String,
    pub n_train: usize,
    pub n_support: usize,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub command: String,
    pub config: serde_json::Value,
    /// Sizes of the sets involved (apps, train, test, clusters, ...).
    #[serde(default)]
    pub counts: BTreeMap<String, usize>,
    #[serde(default)]
    pub ari: Vec<AriScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub models: Vec<ModelSummary>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            format_version: REPORT_FORMAT_VERSION,
            command: command.to_string(),
            config,
            counts: BTreeMap::new(),
            ari: Vec::new(),
            detection: None,
            models: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn count(&mut self, key: &str, n: usize) {
        self.counts.insert(key.to_string(), n);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &to_json(self))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r: Self = crate::store::read_json(path)?;
        if r.format_version != REPORT_FORMAT_VERSION {
            return Err(CliError::Data(format!(
                "{}: report format {} is not supported",
                path.display(),
                r.format_version
            )));
        }
        Ok(r)
    }
}

/// `configuration,reference,ari,n_apps` rows for plotting.
pub fn ari_csv(scores: &[AriScore]) -> Result<String> {
    let err = |e: csv::Error| CliError::Data(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["configuration", "reference", "ari", "n_apps"]).map_err(err)?;
    for s in scores {
        w.write_record([s.configuration.clone(), s.reference.clone(), s.ari.to_string(), s.n_apps.to_string()])
            .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Wall-clock seconds per stage. Written next to the report, never into
/// it, so reports stay byte-identical across reruns.
#[derive(Debug, Default)]
pub struct Timings {
    stages: Vec<(String, f64)>,
}

impl Timings {
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.stages.push((stage.to_string(), t.elapsed().as_secs_f64()));
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let map: Vec<serde_json::Value> = self
            .stages
            .iter()
            .map(|(s, t)| serde_json::json!({ "stage": s, "seconds": t }))
            .collect();
        write_file(path, &to_json(&map))
    }
}
