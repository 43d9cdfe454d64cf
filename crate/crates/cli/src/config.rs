use std::path::{Path, PathBuf};
use std::time::Duration;

use appcat_core::anomaly::{KernelSpec, OcSvmParams};
use appcat_core::cluster::KMeansParams;
use appcat_core::textprep::{parse_lemma_table, parse_word_list, PrepConfig};
use appcat_embed::RemoteConfig;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// A feature source that can feed clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    /// Preprocessed store description.
    Description,
    Name,
    Permissions,
    /// Permission-guarded API calls.
    Apis,
    Strings,
    Icon,
    Libraries,
}

impl FeatureGroup {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureGroup::Description => "description",
            FeatureGroup::Name => "name",
            FeatureGroup::Permissions => "permissions",
            FeatureGroup::Apis => "apis",
            FeatureGroup::Strings => "strings",
            FeatureGroup::Icon => "icon",
            FeatureGroup::Libraries => "libraries",
        }
    }

    /// Groups read from per-app feature files rather than the manifest.
    pub fn needs_apk(&self) -> bool {
        !matches!(self, FeatureGroup::Description)
    }
}

/// How free-text groups (description, name) become vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderChoice {
    Offline,
    Remote,
    Tfidf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    Rbf,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteSettings {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the API key.
    pub credential_env: String,
    pub dim: usize,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for RemoteSettings {
    fn default() -> Self {
        let d = RemoteConfig::default();
        Self {
            base_url: d.base_url,
            model: d.model,
            credential_env: d.api_key_env,
            dim: d.dim,
            batch_size: d.batch_size,
            max_in_flight: d.max_in_flight,
            timeout_secs: d.timeout.as_secs(),
        }
    }
}

impl RemoteSettings {
    pub fn to_remote_config(&self) -> RemoteConfig {
        RemoteConfig {
            base_url: self.base_url.clone(),
            model: self.model.clone(),
            api_key_env: self.credential_env.clone(),
            dim: self.dim,
            batch_size: self.batch_size,
            max_in_flight: self.max_in_flight,
            timeout: Duration::from_secs(self.timeout_secs),
            ..RemoteConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepSettings {
    pub min_token_len: usize,
    /// Replaces the bundled stopword list.
    pub stopwords: Option<PathBuf>,
    /// Replaces the bundled lemma table.
    pub lemmas: Option<PathBuf>,
}

impl Default for PrepSettings {
    fn default() -> Self {
        Self {
            min_token_len: PrepConfig::default().min_token_len,
            stopwords: None,
            lemmas: None,
        }
    }
}

impl PrepSettings {
    pub fn build(&self) -> Result<PrepConfig> {
        let mut cfg = PrepConfig {
            min_token_len: self.min_token_len,
            ..PrepConfig::default()
        };
        if let Some(p) = &self.stopwords {
            cfg.stopwords = parse_word_list(&read_text(p)?).into();
        }
        if let Some(p) = &self.lemmas {
            cfg.lemmas = parse_lemma_table(&read_text(p)?).into();
        }
        Ok(cfg)
    }
}

fn read_text(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
}

/// Every setting of a run. File values are overridden by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub malware_manifest: Option<PathBuf>,
    /// Train/test split file; defaults to `<output_dir>/split.json`.
    pub split: Option<PathBuf>,
    /// Per-app feature files; defaults to `<output_dir>/features`.
    pub features_dir: Option<PathBuf>,
    /// Embedding cache; none when unset.
    pub cache_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub embedder: EmbedderChoice,
    pub remote: RemoteSettings,
    pub prep: PrepSettings,
    pub features: Vec<FeatureGroup>,
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub train_fraction: f64,
    /// Explained-variance target for PCA when several groups are combined.
    pub pca_variance: f64,
    pub nu: f64,
    pub kernel: KernelChoice,
    /// RBF width; `1 / d` when unset.
    pub gamma: Option<f64>,
    pub permission_map: Option<PathBuf>,
    pub library_prefixes: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let km = KMeansParams::default();
        let svm = OcSvmParams::default();
        Self {
            manifest: None,
            malware_manifest: None,
            split: None,
            features_dir: None,
            cache_dir: None,
            output_dir: PathBuf::from("out"),
            embedder: EmbedderChoice::Offline,
            remote: RemoteSettings::default(),
            prep: PrepSettings::default(),
            features: vec![FeatureGroup::Description],
            k: km.k,
            seed: km.seed,
            restarts: km.restarts,
            train_fraction: 0.9,
            pca_variance: 0.95,
            nu: svm.nu,
            kernel: KernelChoice::Rbf,
            gamma: None,
            permission_map: None,
            library_prefixes: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?)
    }

    pub fn features_dir(&self) -> PathBuf {
        self.features_dir.clone().unwrap_or_else(|| self.output_dir.join("features"))
    }

    pub fn split_path(&self) -> PathBuf {
        self.split.clone().unwrap_or_else(|| self.output_dir.join("split.json"))
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| CliError::Config("no manifest given (--manifest or `manifest` in the config file)".into()))
    }

    pub fn kmeans_params(&self) -> KMeansParams {
        KMeansParams {
            k: self.k,
            seed: self.seed,
            restarts: self.restarts,
            ..KMeansParams::default()
        }
    }

    pub fn ocsvm_params(&self) -> OcSvmParams {
        OcSvmParams {
            nu: self.nu,
            kernel: match self.kernel {
                KernelChoice::Rbf => KernelSpec::Rbf { gamma: self.gamma },
                KernelChoice::Linear => KernelSpec::Linear,
            },
            ..OcSvmParams::default()
        }
    }

    /// Short label used as the configuration column of ARI tables.
    pub fn label(&self) -> String {
        let groups: Vec<&str> = self.features.iter().map(FeatureGroup::as_str).collect();
        let text = self.features.iter().any(|g| matches!(g, FeatureGroup::Description | FeatureGroup::Name));
        let mut s = format!("features={}", groups.join("+"));
        if text {
            s.push_str(&format!(";embedder={}", self.embedder_name()));
        }
        s.push_str(&format!(";k={};seed={}", self.k, self.seed));
        s
    }

    fn embedder_name(&self) -> String {
        match self.embedder {
            EmbedderChoice::Offline => "offline".into(),
            EmbedderChoice::Tfidf => "tfidf".into(),
            EmbedderChoice::Remote => format!("remote:{}", self.remote.model),
        }
    }

    /// Checks ranges and that every referenced input path exists.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.features.is_empty() {
            return bad("feature-group selection is empty".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1".into());
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return bad(format!("nu must lie in (0, 1], got {}", self.nu));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        if !(self.pca_variance > 0.0 && self.pca_variance <= 1.0) {
            return bad(format!("pca_variance must lie in (0, 1], got {}", self.pca_variance));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("gamma must be positive, got {g}"));
            }
        }
        if self.remote.batch_size == 0 || self.remote.max_in_flight == 0 {
            return bad("remote batch_size and max_in_flight must be at least 1".into());
        }
        let inputs = [
            &self.manifest,
            &self.malware_manifest,
            &self.permission_map,
            &self.library_prefixes,
            &self.prep.stopwords,
            &self.prep.lemmas,
        ];
        for p in inputs.into_iter().flatten() {
            if !p.exists() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        Ok(())
    }

    /// The config as echoed in reports: output locations are left out so
    /// reruns into another directory produce the same report.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("output_dir");
            o.remove("cache_dir");
        }
        v
    }
}

/// Command-line mirror of [`RunConfig`]; every flag is optional.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// TOML file supplying any of the settings below.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    pub malware_manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    pub split: Option<PathBuf>,
    #[arg(long, global = true)]
    pub features_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, short = 'o', global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    pub embedder: Option<EmbedderChoice>,
    #[arg(long, global = true)]
    pub remote_model: Option<String>,
    #[arg(long, global = true)]
    pub remote_base_url: Option<String>,
    /// Environment variable holding the embedding API key.
    #[arg(long, global = true)]
    pub credential_env: Option<String>,
    #[arg(long, global = true)]
    pub max_in_flight: Option<usize>,
    #[arg(long, global = true)]
    pub min_token_len: Option<usize>,
    #[arg(long, global = true)]
    pub stopwords: Option<PathBuf>,
    #[arg(long, global = true)]
    pub lemmas: Option<PathBuf>,
    /// Comma-separated feature groups.
    #[arg(long, value_enum, value_delimiter = ',', global = true)]
    pub features: Option<Vec<FeatureGroup>>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub restarts: Option<usize>,
    #[arg(long, global = true)]
    pub train_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub pca_variance: Option<f64>,
    #[arg(long, global = true)]
    pub nu: Option<f64>,
    #[arg(long, value_enum, global = true)]
    pub kernel: Option<KernelChoice>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub permission_map: Option<PathBuf>,
    #[arg(long, global = true)]
    pub library_prefixes: Option<PathBuf>,
}

macro_rules! set {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
    (opt $dst:expr, $src:expr) => {
        if $src.is_some() {
            $dst = $src;
        }
    };
}

impl ConfigFlags {
    /// Loads the config file, if any, then applies the flags on top.
    pub fn resolve(self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        self.apply(&mut c);
        Ok(c)
    }

    pub fn apply(self, c: &mut RunConfig) {
        set!(opt c.manifest, self.manifest);
        set!(opt c.malware_manifest, self.malware_manifest);
        set!(opt c.split, self.split);
        set!(opt c.features_dir, self.features_dir);
        set!(opt c.cache_dir, self.cache_dir);
        set!(c.output_dir, self.output_dir);
        set!(c.embedder, self.embedder);
        set!(c.remote.model, self.remote_model);
        set!(c.remote.base_url, self.remote_base_url);
        set!(c.remote.credential_env, self.credential_env);
        set!(c.remote.max_in_flight, self.max_in_flight);
        set!(c.prep.min_token_len, self.min_token_len);
        set!(opt c.prep.stopwords, self.stopwords);
        set!(opt c.prep.lemmas, self.lemmas);
        set!(c.features, self.features);
        set!(c.k, self.k);
        set!(c.seed, self.seed);
        set!(c.restarts, self.restarts);
        set!(c.train_fraction, self.train_fraction);
        set!(c.pca_variance, self.pca_variance);
        set!(c.nu, self.nu);
        set!(c.kernel, self.kernel);
        set!(opt c.gamma, self.gamma);
        set!(opt c.permission_map, self.permission_map);
        set!(opt c.library_prefixes, self.library_prefixes);
    }
}
