//! Subcommand drivers: read inputs from disk, run a stage, write outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use appcat_apk::{bundled_prefixes, extract_all, load_prefixes, ApkFeatures, PermissionApiMap};
use appcat_core::anomaly::ApiFeatureSpace;
use appcat_core::cluster::KMeansModel;
use appcat_core::dataset::{load_manifest, merge_malware, stratified_split, AppRecord, Manifest, Split};
use appcat_core::metrics::Partition;
use appcat_embed::{EmbeddingCache, OfflineEmbedder, Provider, RemoteEmbedder};
use log::{error, info, warn};

use crate::config::{EmbedderChoice, FeatureGroup, RunConfig};
use crate::error::{CliError, Result};
use crate::pipeline::{self, CategorizeSpec, DetectionInput};
use crate::report::{ari_csv, AriScore, RunReport, Timings};
use crate::store::{read_json, to_json, write_file, FeatureStore};
use crate::synth;
use crate::vectorizer::{AppView, EmbedContext, Vectorizer};

pub const PARTITION_FILE: &str = "partition.csv";
pub const ASSIGNMENTS_FILE: &str = "assignments.csv";
pub const KMEANS_FILE: &str = "kmeans.json";
pub const VECTORIZER_FILE: &str = "vectorizer.json";
pub const MODELS_FILE: &str = "ocsvm_models.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const ARI_FILE: &str = "ari.csv";

pub fn report_path(cfg: &RunConfig, command: &str) -> PathBuf {
    cfg.output_dir.join(format!("{command}_report.json"))
}

fn timings_path(cfg: &RunConfig, command: &str) -> PathBuf {
    cfg.output_dir.join(format!("{command}_timings.json"))
}

fn load(path: &Path) -> Result<Manifest> {
    let mut m = load_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut records = m.records().to_vec();
    for r in &mut records {
        if let Some(p) = &r.apk_path {
            if p.is_relative() {
                r.apk_path = Some(base.join(p));
            }
        }
    }
    m = Manifest::from_records(records)?;
    Ok(m)
}

fn benign_manifest(cfg: &RunConfig) -> Result<Manifest> {
    load(cfg.manifest_path()?)
}

fn malware_manifest(cfg: &RunConfig) -> Result<Option<Manifest>> {
    cfg.malware_manifest.as_deref().map(load).transpose()
}

fn permission_map(cfg: &RunConfig) -> Result<PermissionApiMap> {
    match &cfg.permission_map {
        Some(p) => Ok(PermissionApiMap::load(p)?),
        None => Ok(PermissionApiMap::bundled()),
    }
}

fn library_prefixes(cfg: &RunConfig) -> Result<Vec<String>> {
    match &cfg.library_prefixes {
        Some(p) => Ok(load_prefixes(p)?),
        None => Ok(bundled_prefixes()),
    }
}

fn ensure_output_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::io(&cfg.output_dir, e))
}

/// Embedding provider for the configured choice; `None` for TF-IDF or
/// when no text group is selected.
pub enum ProviderHandle {
    Offline(OfflineEmbedder),
    Remote(Box<RemoteEmbedder>),
}

impl ProviderHandle {
    pub fn for_config(cfg: &RunConfig, groups: &[FeatureGroup]) -> Result<Option<Self>> {
        let text = groups.iter().any(|g| matches!(g, FeatureGroup::Description | FeatureGroup::Name));
        if !text {
            return Ok(None);
        }
        Ok(match cfg.embedder {
            EmbedderChoice::Tfidf => None,
            EmbedderChoice::Offline => Some(ProviderHandle::Offline(OfflineEmbedder)),
            EmbedderChoice::Remote => Some(ProviderHandle::Remote(Box::new(RemoteEmbedder::from_env(
                cfg.remote.to_remote_config(),
            )?))),
        })
    }

    pub fn as_provider(&self) -> &dyn Provider {
        match self {
            ProviderHandle::Offline(p) => p,
            ProviderHandle::Remote(p) => p.as_ref(),
        }
    }
}

fn open_cache(cfg: &RunConfig) -> Result<Option<EmbeddingCache>> {
    cfg.cache_dir.as_ref().map(|d| EmbeddingCache::open(d).map_err(CliError::from)).transpose()
}

/// Loads feature files for `records` when any group reads them.
fn features_for(cfg: &RunConfig, groups: &[FeatureGroup], records: &[AppRecord]) -> Result<Vec<Option<ApkFeatures>>> {
    if !groups.iter().any(FeatureGroup::needs_apk) {
        return Ok(vec![None; records.len()]);
    }
    let store = FeatureStore::new(cfg.features_dir());
    records.iter().map(|r| store.load(&r.app_id).map(Some)).collect()
}

fn views<'a>(records: &'a [AppRecord], features: &'a [Option<ApkFeatures>]) -> Vec<AppView<'a>> {
    records
        .iter()
        .zip(features)
        .map(|(record, f)| AppView {
            record,
            features: f.as_ref(),
        })
        .collect()
}

/// The split used by stages that distinguish training from test apps:
/// the configured file, else `<output_dir>/split.json` when present.
fn optional_split(cfg: &RunConfig) -> Result<Option<Split>> {
    let path = cfg.split_path();
    if cfg.split.is_some() || path.exists() {
        Ok(Some(Split::load(&path)?))
    } else {
        Ok(None)
    }
}

fn required_split(cfg: &RunConfig) -> Result<Split> {
    optional_split(cfg)?.ok_or_else(|| {
        CliError::Config(format!("no split found at {}; run `split` first", cfg.split_path().display()))
    })
}

// ---------------------------------------------------------------- extract

#[derive(Debug, Default)]
pub struct ExtractOutcome {
    pub written: Vec<PathBuf>,
    pub failures: Vec<(String, String)>,
    pub skipped: Vec<String>,
}

/// One feature file per app with an APK. Failures are logged and the batch
/// continues; it is an error only when nothing could be extracted.
pub fn cmd_extract(cfg: &RunConfig) -> Result<ExtractOutcome> {
    cfg.validate()?;
    let mut records = benign_manifest(cfg)?.records().to_vec();
    if let Some(m) = malware_manifest(cfg)? {
        records.extend(m.records().iter().cloned());
    }
    let map = permission_map(cfg)?;
    let prefixes = library_prefixes(cfg)?;
    let store = FeatureStore::new(cfg.features_dir());
    std::fs::create_dir_all(store.dir()).map_err(|e| CliError::io(store.dir(), e))?;

    let mut outcome = ExtractOutcome::default();
    let jobs: Vec<(&AppRecord, &Path)> = records
        .iter()
        .filter_map(|r| match &r.apk_path {
            Some(p) => Some((r, p.as_path())),
            None => {
                warn!("app `{}` has no apk_path; skipped", r.app_id);
                outcome.skipped.push(r.app_id.clone());
                None
            }
        })
        .collect();

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<PathBuf>)>> = Mutex::new(Vec::new());
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(r, path)) = jobs.get(i) else { break };
                let res = extract_all(path, &map, &prefixes, None)
                    .map_err(CliError::from)
                    .and_then(|f| {
                        for d in &f.diagnostics {
                            warn!("{}: {}: {}", r.app_id, d.field, d.message);
                        }
                        store.save(&r.app_id, &f)
                    });
                results.lock().expect("results lock").push((i, res));
            });
        }
    });
    let mut results = results.into_inner().expect("results lock");
    results.sort_by_key(|(i, _)| *i);
    for (i, res) in results {
        match res {
            Ok(p) => outcome.written.push(p),
            Err(e) => {
                error!("extraction failed for `{}`: {e}", jobs[i].0.app_id);
                outcome.failures.push((jobs[i].0.app_id.clone(), e.to_string()));
            }
        }
    }
    info!("extracted {} of {} APKs", outcome.written.len(), jobs.len());
    if outcome.written.is_empty() {
        return Err(CliError::Data(format!("no APK could be extracted ({} attempted)", jobs.len())));
    }
    Ok(outcome)
}

// ------------------------------------------------------------------ split

pub fn cmd_split(cfg: &RunConfig) -> Result<Split> {
    cfg.validate()?;
    let manifest = benign_manifest(cfg)?;
    let split = stratified_split(&manifest, cfg.train_fraction, cfg.seed)?;
    let path = cfg.split_path();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    split.save(&path)?;
    info!("split {} apps: {} train, {} test -> {}", manifest.len(), split.train.len(), split.test.len(), path.display());
    Ok(split)
}

// ------------------------------------------------------------- categorize

fn ari_scores(cfg: &RunConfig, partition: &Partition, records: &[AppRecord], report: &mut RunReport) -> Result<()> {
    let (labels, unlabeled) = pipeline::label_partition(records);
    if !unlabeled.is_empty() {
        report
            .warnings
            .push(format!("{} app(s) without class_label left out of the ARI", unlabeled.len()));
    }
    match pipeline::shared_ari(partition, &labels)? {
        Some((ari, n)) => report.ari.push(AriScore {
            configuration: cfg.label(),
            reference: "class_label".into(),
            ari,
            n_apps: n,
        }),
        None => report.warnings.push("fewer than two labelled apps; no ARI computed".into()),
    }
    Ok(())
}

/// Clusters the training apps (or all apps when no split exists) and
/// writes the partition, fitted models and a report.
pub fn cmd_categorize(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let mut timings = Timings::default();
    let manifest = benign_manifest(cfg)?;
    let records: Vec<AppRecord> = match optional_split(cfg)? {
        Some(split) => {
            info!("clustering the {} training apps of the split", split.train.len());
            manifest.subset(split.train.iter().map(String::as_str))?.records().to_vec()
        }
        None => manifest.records().to_vec(),
    };
    let features = timings.time("load_features", || features_for(cfg, &cfg.features, &records))?;
    let apps = views(&records, &features);
    let provider = ProviderHandle::for_config(cfg, &cfg.features)?;
    let cache = open_cache(cfg)?;
    let prep = cfg.prep.build()?;
    let spec = CategorizeSpec {
        groups: &cfg.features,
        embedder: cfg.embedder,
        pca_variance: cfg.pca_variance,
        kmeans: cfg.kmeans_params(),
        prep: &prep,
        ctx: EmbedContext {
            provider: provider.as_ref().map(ProviderHandle::as_provider),
            cache: cache.as_ref(),
        },
    };
    let out = timings.time("vectorize_and_cluster", || pipeline::categorize(&apps, &spec))?;

    let mut report = RunReport::new("categorize", cfg.echo());
    report.count("apps", records.len());
    report.count("clusters", out.partition.clusters().len());
    report.count("dim", out.model.dim);
    report.warnings.extend(crate::vectorizer::degraded_warnings(&apps, &cfg.features));
    ari_scores(cfg, &out.partition, &records, &mut report)?;

    ensure_output_dir(cfg)?;
    write_file(&cfg.output_dir.join(PARTITION_FILE), &out.partition.to_csv())?;
    write_file(&cfg.output_dir.join(KMEANS_FILE), &to_json(&out.model))?;
    write_file(&cfg.output_dir.join(VECTORIZER_FILE), &to_json(&out.vectorizer))?;
    write_file(&cfg.output_dir.join(ARI_FILE), &ari_csv(&report.ari)?)?;
    report.save(&report_path(cfg, "categorize"))?;
    timings.save(&timings_path(cfg, "categorize"))?;
    Ok(report)
}

// ----------------------------------------------------------------- assign

/// Apps to place into existing clusters: the split's test apps plus any
/// malware, or every manifest app when there is no split.
fn assignment_records(cfg: &RunConfig) -> Result<Vec<AppRecord>> {
    let manifest = benign_manifest(cfg)?;
    let mut records = match optional_split(cfg)? {
        Some(split) => manifest.subset(split.test.iter().map(String::as_str))?.records().to_vec(),
        None => manifest.records().to_vec(),
    };
    if let Some(m) = malware_manifest(cfg)? {
        records.extend(m.records().iter().cloned());
    }
    Ok(records)
}

pub fn cmd_assign(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let mut timings = Timings::default();
    let vectorizer: Vectorizer = read_json(&cfg.output_dir.join(VECTORIZER_FILE))?;
    let model: KMeansModel<f64> = read_json(&cfg.output_dir.join(KMEANS_FILE))?;
    let groups = vectorizer.feature_groups();
    let records = assignment_records(cfg)?;
    let features = features_for(cfg, &groups, &records)?;
    let apps = views(&records, &features);
    let provider = ProviderHandle::for_config(cfg, &groups)?;
    let cache = open_cache(cfg)?;
    let prep = cfg.prep.build()?;
    let ctx = EmbedContext {
        provider: provider.as_ref().map(ProviderHandle::as_provider),
        cache: cache.as_ref(),
    };
    let partition = timings.time("assign", || pipeline::assign(&vectorizer, &model, &apps, &prep, ctx))?;

    let mut report = RunReport::new("assign", cfg.echo());
    report.count("apps", records.len());
    report.count("malicious", records.iter().filter(|r| r.is_malicious).count());
    report.warnings.extend(crate::vectorizer::degraded_warnings(&apps, &groups));
    ensure_output_dir(cfg)?;
    write_file(&cfg.output_dir.join(ASSIGNMENTS_FILE), &partition.to_csv())?;
    report.save(&report_path(cfg, "assign"))?;
    timings.save(&timings_path(cfg, "assign"))?;
    Ok(report)
}

// ----------------------------------------------------------------- detect

fn load_partition(path: &Path) -> Result<Partition> {
    if !path.exists() {
        return Err(CliError::Config(format!("{} not found; run the earlier stage first", path.display())));
    }
    Ok(Partition::load_csv(path)?)
}

fn scores_csv(scored: &[pipeline::ScoredApp]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(["app_id", "cluster_id", "score", "flagged", "is_malicious"]).map_err(io)?;
    for s in scored {
        w.write_record([
            s.app_id.clone(),
            s.cluster.clone(),
            s.score.to_string(),
            s.flagged.to_string(),
            s.is_malicious.to_string(),
        ])
        .map_err(io)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| CliError::Data(e.to_string()))?).expect("csv is utf-8"))
}

/// Per-cluster OC-SVMs over binary sensitive-API features, trained on the
/// benign training apps and scored on the test apps (plus malware).
pub fn cmd_detect(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let mut timings = Timings::default();
    let benign = benign_manifest(cfg)?;
    let split = required_split(cfg)?;
    let malware = malware_manifest(cfg)?.unwrap_or_default();
    let merged = merge_malware(&benign, &split.test, &malware)?;

    let clusters = load_partition(&cfg.output_dir.join(PARTITION_FILE))?;
    let train = clusters.restrict(split.train.iter().map(String::as_str));
    if train.len() != split.train.len() {
        return Err(CliError::Data(format!(
            "{PARTITION_FILE} covers {} of {} training apps; rerun `categorize` with this split",
            train.len(),
            split.train.len()
        )));
    }
    let assigned = load_partition(&cfg.output_dir.join(ASSIGNMENTS_FILE))?;
    let test_ids: Vec<&str> = merged.manifest.ids().collect();
    if let Some(missing) = test_ids.iter().find(|id| assigned.cluster_of(id).is_none()) {
        return Err(CliError::Data(format!("test app `{missing}` has no cluster assignment; run `assign` first")));
    }
    let test = assigned.restrict(test_ids.iter().copied());

    let store = FeatureStore::new(cfg.features_dir());
    let apis: BTreeMap<String, BTreeMap<String, u32>> = timings.time("load_features", || {
        split
            .train
            .iter()
            .map(String::as_str)
            .chain(test_ids.iter().copied())
            .map(|id| Ok((id.to_string(), store.load(id)?.restricted_apis)))
            .collect::<Result<_>>()
    })?;
    let map = permission_map(cfg)?;
    let space = ApiFeatureSpace::new(map.signatures().map(str::to_string));
    let malicious: BTreeSet<String> = malware.ids().map(str::to_string).collect();
    let params = cfg.ocsvm_params();
    let detection = timings.time("train_and_score", || {
        pipeline::detect(&DetectionInput {
            train: &train,
            test: &test,
            apis: &apis,
            malicious: &malicious,
            space: &space,
            params: &params,
        })
    })?;

    let mut report = RunReport::new("detect", cfg.echo());
    report.count("train", train.len());
    report.count("test_benign", merged.benign);
    report.count("test_malicious", merged.malicious);
    report.count("models", detection.models.len());
    report.count("api_features", space.dim());
    report.detection = Some(detection.summary.clone());
    report.models = detection.model_summaries();
    report.warnings.extend(detection.warnings.iter().cloned());

    ensure_output_dir(cfg)?;
    write_file(&cfg.output_dir.join(MODELS_FILE), &to_json(&detection.models))?;
    write_file(&cfg.output_dir.join(SCORES_FILE), &scores_csv(&detection.scored)?)?;
    report.save(&report_path(cfg, "detect"))?;
    timings.save(&timings_path(cfg, "detect"))?;
    Ok(report)
}

// --------------------------------------------------------------- evaluate

/// ARI of a partition against another partition file, or against the
/// manifest's class labels when `against` is `None`.
pub fn cmd_evaluate(cfg: &RunConfig, partition: Option<&Path>, against: Option<&Path>) -> Result<RunReport> {
    let path = partition.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.join(PARTITION_FILE));
    let p = load_partition(&path)?;
    let mut report = RunReport::new("evaluate", cfg.echo());
    report.count("apps", p.len());
    match against {
        Some(other) => {
            let q = load_partition(other)?;
            match pipeline::shared_ari(&p, &q)? {
                Some((ari, n)) => report.ari.push(AriScore {
                    configuration: cfg.label(),
                    reference: other.display().to_string(),
                    ari,
                    n_apps: n,
                }),
                None => return Err(CliError::Data("the partitions share fewer than two apps".into())),
            }
        }
        None => {
            cfg.validate()?;
            let manifest = benign_manifest(cfg)?;
            ari_scores(cfg, &p, manifest.records(), &mut report)?;
        }
    }
    ensure_output_dir(cfg)?;
    report.save(&report_path(cfg, "evaluate"))?;
    Ok(report)
}

// ----------------------------------------------------------------- report

/// Collects the ARI rows of several reports into one CSV and returns them.
pub fn cmd_report(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<Vec<AriScore>> {
    if inputs.is_empty() {
        return Err(CliError::Config("no report files given".into()));
    }
    let mut rows = Vec::new();
    for p in inputs {
        let r = RunReport::load(p)?;
        rows.extend(r.ari);
    }
    ensure_output_dir(cfg)?;
    write_file(&cfg.output_dir.join("ari_summary.csv"), &ari_csv(&rows)?)?;
    Ok(rows)
}

// ------------------------------------------------------------------ synth

/// Writes a synthetic benign manifest, a malware manifest and API-only
/// feature files into `cfg.output_dir`.
pub fn cmd_synth(cfg: &RunConfig, shape: &synth::DetectionShape) -> Result<(PathBuf, PathBuf)> {
    if shape.classes == 0 || shape.classes > synth::MAX_CLASSES {
        return Err(CliError::Config(format!("classes must lie in 1..={}", synth::MAX_CLASSES)));
    }
    let map = permission_map(cfg)?;
    let sigs: Vec<String> = map.signatures().map(str::to_string).collect();
    let data = synth::synth_detection(shape, &sigs, cfg.seed);
    ensure_output_dir(cfg)?;
    let benign = cfg.output_dir.join("manifest.jsonl");
    let malware = cfg.output_dir.join("malware.jsonl");
    data.benign.save(&benign)?;
    data.malware.save(&malware)?;
    let store = FeatureStore::new(cfg.features_dir());
    for (id, apis) in &data.apis {
        store.save(id, &synth::api_only_features(id, apis))?;
    }
    Ok((benign, malware))
}
