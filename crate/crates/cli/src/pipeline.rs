//! In-memory stages shared by the subcommands and the test harnesses.

use std::collections::{BTreeMap, BTreeSet};

use appcat_core::anomaly::{train_per_cluster, ApiFeatureSpace, OcSvmModel, OcSvmParams};
use appcat_core::cluster::{kmeans_fit, KMeansModel, KMeansParams};
use appcat_core::dataset::AppRecord;
use appcat_core::metrics::{adjusted_rand_index, DetectionCounts, Partition};
use appcat_core::textprep::PrepConfig;
use serde::{Deserialize, Serialize};

use crate::config::{EmbedderChoice, FeatureGroup};
use crate::error::{CliError, Result};
use crate::report::{DetectionSummary, ModelSummary};
use crate::vectorizer::{AppView, EmbedContext, Vectorizer};

/// Everything needed to vectorize and cluster one set of apps.
#[derive(Clone, Copy)]
pub struct CategorizeSpec<'a> {
    pub groups: &'a [FeatureGroup],
    pub embedder: EmbedderChoice,
    pub pca_variance: f64,
    pub kmeans: KMeansParams,
    pub prep: &'a PrepConfig,
    pub ctx: EmbedContext<'a>,
}

pub struct Categorized {
    pub vectorizer: Vectorizer,
    pub model: KMeansModel<f64>,
    pub partition: Partition,
    /// Inertia trace of every restart.
    pub traces: Vec<Vec<f64>>,
}

pub fn categorize(apps: &[AppView], spec: &CategorizeSpec) -> Result<Categorized> {
    let (vectorizer, m) = Vectorizer::fit(spec.groups, spec.embedder, spec.pca_variance, spec.prep, apps, spec.ctx)?;
    let fit = kmeans_fit(&m, &spec.kmeans)?;
    Ok(Categorized {
        partition: fit.partition(m.ids()),
        model: fit.model,
        traces: fit.traces,
        vectorizer,
    })
}

/// Nearest-centroid cluster for each app, in the fitted feature space.
pub fn assign(
    vectorizer: &Vectorizer,
    model: &KMeansModel<f64>,
    apps: &[AppView],
    prep: &PrepConfig,
    ctx: EmbedContext,
) -> Result<Partition> {
    let m = vectorizer.transform(prep, apps, ctx)?;
    Ok(model.assign_partition(&m)?)
}

/// Ground-truth partition of the labelled records plus the ids without a label.
pub fn label_partition<'a, I: IntoIterator<Item = &'a AppRecord>>(records: I) -> (Partition, Vec<String>) {
    let mut p = Partition::new();
    let mut unlabeled = Vec::new();
    for r in records {
        match &r.class_label {
            Some(c) => p.insert(r.app_id.clone(), c.clone()).expect("manifest ids are unique"),
            None => unlabeled.push(r.app_id.clone()),
        }
    }
    (p, unlabeled)
}

/// ARI on the ids both partitions share; `None` when fewer than two do.
pub fn shared_ari(x: &Partition, y: &Partition) -> Result<Option<(f64, usize)>> {
    let xs = x.restrict(y.iter().map(|(id, _)| id));
    if xs.len() < 2 {
        return Ok(None);
    }
    let ys = y.restrict(xs.iter().map(|(id, _)| id));
    Ok(Some((adjusted_rand_index(&xs, &ys)?, xs.len())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredApp {
    pub app_id: String,
    pub cluster: String,
    pub score: f64,
    pub flagged: bool,
    pub is_malicious: bool,
}

pub struct DetectionInput<'a> {
    /// Cluster of each benign training app.
    pub train: &'a Partition,
    /// Assigned cluster of each test app.
    pub test: &'a Partition,
    /// Call-site counts per sensitive API, keyed by app id.
    pub apis: &'a BTreeMap<String, BTreeMap<String, u32>>,
    pub malicious: &'a BTreeSet<String>,
    pub space: &'a ApiFeatureSpace,
    pub params: &'a OcSvmParams,
}

pub struct Detection {
    pub models: BTreeMap<String, OcSvmModel<f64>>,
    pub scored: Vec<ScoredApp>,
    pub counts: DetectionCounts,
    pub summary: DetectionSummary,
    pub warnings: Vec<String>,
}

impl Detection {
    pub fn model_summaries(&self) -> Vec<ModelSummary> {
        self.models
            .values()
            .map(|m| ModelSummary {
                cluster: m.cluster_id.clone(),
                n_train: m.n_train,
                n_support: m.support_vectors.len(),
                low_confidence: m.low_confidence,
            })
            .collect()
    }
}

fn api_rows(
    space: &ApiFeatureSpace,
    ids: impl Iterator<Item = String>,
    apis: &BTreeMap<String, BTreeMap<String, u32>>,
) -> Result<appcat_core::vectorize::FeatureMatrix<f64>> {
    let rows = ids
        .map(|id| {
            let counts = apis
                .get(&id)
                .ok_or_else(|| CliError::Data(format!("no sensitive-API features for app `{id}`")))?;
            Ok((id, counts.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(space.matrix(&rows))
}

/// Trains one OC-SVM per training cluster and scores every test app with
/// the model of its assigned cluster.
pub fn detect(input: &DetectionInput) -> Result<Detection> {
    let train_rows = api_rows(input.space, input.train.iter().map(|(id, _)| id.to_string()), input.apis)?;
    let models = train_per_cluster(&train_rows, input.train, input.params, input.space.hash)?;
    let mut warnings: Vec<String> = models
        .values()
        .filter(|m| m.low_confidence)
        .map(|m| format!("cluster {} trained on only {} app(s); model is low-confidence", m.cluster_id, m.n_train))
        .collect();

    let test_rows = api_rows(input.space, input.test.iter().map(|(id, _)| id.to_string()), input.apis)?;
    let mut counts = DetectionCounts::default();
    let mut scored = Vec::with_capacity(test_rows.n_rows());
    for (i, (id, cluster)) in input.test.iter().enumerate() {
        let model = models
            .get(cluster)
            .ok_or_else(|| CliError::Data(format!("no model for cluster `{cluster}` assigned to app `{id}`")))?;
        let score = model.decision(test_rows.row(i));
        let flagged = score < 0.0;
        let is_malicious = input.malicious.contains(id);
        counts.record(is_malicious, flagged);
        scored.push(ScoredApp {
            app_id: id.to_string(),
            cluster: cluster.to_string(),
            score,
            flagged,
            is_malicious,
        });
    }
    let summary = DetectionSummary::from_counts(counts, &mut warnings);
    Ok(Detection {
        models,
        scored,
        counts,
        summary,
        warnings,
    })
}
