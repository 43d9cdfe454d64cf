//! Fitted turn-apps-into-rows state, persisted so test apps can be placed
//! in the same space as the training apps.

use std::collections::BTreeSet;

use appcat_apk::{ApkFeatures, ICON_DIM};
use appcat_core::dataset::AppRecord;
use appcat_core::textprep::PrepConfig;
use appcat_core::vectorize::{concat, FeatureMatrix, MinMaxScaler, PcaModel, Retain, TfidfModel};
use appcat_embed::{embed_texts, EmbeddingCache, Provider};
use serde::{Deserialize, Serialize};

use crate::config::{EmbedderChoice, FeatureGroup};
use crate::error::{CliError, Result};

pub const VECTORIZER_FORMAT_VERSION: u32 = 1;

/// One app as seen by the vectorizer.
#[derive(Debug, Clone, Copy)]
pub struct AppView<'a> {
    pub record: &'a AppRecord,
    pub features: Option<&'a ApkFeatures>,
}

impl<'a> AppView<'a> {
    fn id(&self) -> &'a str {
        &self.record.app_id
    }

    fn apk(&self, group: FeatureGroup) -> Result<&'a ApkFeatures> {
        self.features.ok_or_else(|| {
            CliError::Data(format!("app `{}` has no extracted features for group `{}`", self.id(), group.as_str()))
        })
    }
}

/// Embedding backend and cache used for free-text groups.
#[derive(Clone, Copy, Default)]
pub struct EmbedContext<'a> {
    pub provider: Option<&'a dyn Provider>,
    pub cache: Option<&'a EmbeddingCache>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupModel {
    Embedding { group: FeatureGroup, provider_id: String, dim: usize },
    Tfidf { group: FeatureGroup, model: TfidfModel<f64> },
    Icon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vectorizer {
    pub format_version: u32,
    pub groups: Vec<GroupModel>,
    /// Present when more than one group is combined.
    pub scaler: Option<MinMaxScaler<f64>>,
    pub pca: Option<PcaModel<f64>>,
}

fn description_tokens(app: &AppView, prep: &PrepConfig) -> Result<Vec<String>> {
    if app.record.description.trim().is_empty() {
        return Err(CliError::Data(format!("app `{}` has no description", app.id())));
    }
    Ok(prep.preprocess(&app.record.description).tokens)
}

fn app_name(app: &AppView) -> Result<String> {
    let name = app.apk(FeatureGroup::Name)?.app_name.trim().to_string();
    if name.is_empty() {
        return Err(CliError::Data(format!("app `{}` has no name", app.id())));
    }
    Ok(name)
}

/// What an embedder receives for a text group.
fn embed_input(group: FeatureGroup, app: &AppView, prep: &PrepConfig) -> Result<String> {
    match group {
        FeatureGroup::Description => Ok(description_tokens(app, prep)?.join(" ")),
        FeatureGroup::Name => app_name(app),
        _ => unreachable!("only text groups are embedded"),
    }
}

/// Token bag used by TF-IDF for any non-icon group.
fn token_doc(group: FeatureGroup, app: &AppView, prep: &PrepConfig) -> Result<Vec<String>> {
    Ok(match group {
        FeatureGroup::Description => description_tokens(app, prep)?,
        FeatureGroup::Name => prep.preprocess(&app_name(app)?).tokens,
        FeatureGroup::Permissions => app.apk(group)?.permissions.iter().cloned().collect(),
        FeatureGroup::Apis => app.apk(group)?.restricted_apis.keys().cloned().collect(),
        FeatureGroup::Strings => app.apk(group)?.strings.iter().cloned().collect(),
        FeatureGroup::Libraries => app.apk(group)?.libraries.iter().cloned().collect(),
        FeatureGroup::Icon => unreachable!("icons are not token bags"),
    })
}

fn ids(apps: &[AppView]) -> Vec<String> {
    apps.iter().map(|a| a.id().to_string()).collect()
}

fn icon_matrix(apps: &[AppView]) -> Result<FeatureMatrix<f64>> {
    let rows = apps
        .iter()
        .map(|a| {
            let v = &a.apk(FeatureGroup::Icon)?.icon_descriptor;
            if v.len() != ICON_DIM {
                return Err(CliError::Data(format!(
                    "app `{}`: icon descriptor has {} values, expected {ICON_DIM}",
                    a.id(),
                    v.len()
                )));
            }
            Ok(v.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureMatrix::from_rows(ids(apps), rows)?)
}

fn embedded_matrix(
    group: FeatureGroup,
    apps: &[AppView],
    prep: &PrepConfig,
    ctx: EmbedContext,
) -> Result<(FeatureMatrix<f64>, String)> {
    let provider = ctx
        .provider
        .ok_or_else(|| CliError::Config("an embedding provider is required for text groups".into()))?;
    let texts = apps.iter().map(|a| embed_input(group, a, prep)).collect::<Result<Vec<_>>>()?;
    let vectors = embed_texts(&texts, provider, ctx.cache)?;
    let rows = vectors
        .into_iter()
        .map(|v| v.values.into_iter().map(f64::from).collect())
        .collect();
    Ok((FeatureMatrix::from_rows(ids(apps), rows)?, provider.id().to_string()))
}

fn token_docs(group: FeatureGroup, apps: &[AppView], prep: &PrepConfig) -> Result<Vec<Vec<String>>> {
    apps.iter().map(|a| token_doc(group, a, prep)).collect()
}

/// Apps whose extraction degraded, one line per affected field.
pub fn degraded_warnings(apps: &[AppView], groups: &[FeatureGroup]) -> Vec<String> {
    let wanted: BTreeSet<&str> = groups
        .iter()
        .map(|g| match g {
            FeatureGroup::Name => "app_name",
            FeatureGroup::Apis => "restricted_apis",
            FeatureGroup::Icon => "icon_descriptor",
            other => other.as_str(),
        })
        .collect();
    let mut out = Vec::new();
    for a in apps {
        if let Some(f) = a.features {
            for d in f.diagnostics.iter().filter(|d| wanted.contains(d.field.as_str())) {
                out.push(format!("app `{}`: degraded {}: {}", a.id(), d.field, d.message));
            }
        }
    }
    out
}

impl Vectorizer {
    /// Fits on `apps` and returns the training matrix.
    pub fn fit(
        groups: &[FeatureGroup],
        embedder: EmbedderChoice,
        pca_variance: f64,
        prep: &PrepConfig,
        apps: &[AppView],
        ctx: EmbedContext,
    ) -> Result<(Self, FeatureMatrix<f64>)> {
        if groups.is_empty() {
            return Err(CliError::Config("feature-group selection is empty".into()));
        }
        let mut models = Vec::new();
        let mut blocks = Vec::new();
        for &group in groups {
            match group {
                FeatureGroup::Icon => {
                    models.push(GroupModel::Icon);
                    blocks.push(icon_matrix(apps)?);
                }
                FeatureGroup::Description | FeatureGroup::Name if embedder != EmbedderChoice::Tfidf => {
                    let (m, provider_id) = embedded_matrix(group, apps, prep, ctx)?;
                    models.push(GroupModel::Embedding {
                        group,
                        provider_id,
                        dim: m.n_cols(),
                    });
                    blocks.push(m);
                }
                _ => {
                    let docs = token_docs(group, apps, prep)?;
                    let model = TfidfModel::<f64>::fit(&docs)
                        .map_err(|e| CliError::Data(format!("group `{}`: {e}", group.as_str())))?;
                    blocks.push(model.transform(ids(apps), &docs)?);
                    models.push(GroupModel::Tfidf { group, model });
                }
            }
        }
        if blocks.len() == 1 {
            let m = blocks.pop().expect("one block");
            return Ok((
                Self {
                    format_version: VECTORIZER_FORMAT_VERSION,
                    groups: models,
                    scaler: None,
                    pca: None,
                },
                m,
            ));
        }
        let joined = concat(&blocks)?;
        let scaler = MinMaxScaler::fit(&joined)?;
        let (pca, projected) = PcaModel::fit_transform(&scaler.transform(&joined)?, Retain::VarianceRatio(pca_variance))?;
        Ok((
            Self {
                format_version: VECTORIZER_FORMAT_VERSION,
                groups: models,
                scaler: Some(scaler),
                pca: Some(pca),
            },
            projected,
        ))
    }

    pub fn feature_groups(&self) -> Vec<FeatureGroup> {
        self.groups
            .iter()
            .map(|g| match g {
                GroupModel::Embedding { group, .. } | GroupModel::Tfidf { group, .. } => *group,
                GroupModel::Icon => FeatureGroup::Icon,
            })
            .collect()
    }

    /// Rows for new apps in the fitted space.
    pub fn transform(&self, prep: &PrepConfig, apps: &[AppView], ctx: EmbedContext) -> Result<FeatureMatrix<f64>> {
        let mut blocks = Vec::new();
        for g in &self.groups {
            blocks.push(match g {
                GroupModel::Icon => icon_matrix(apps)?,
                GroupModel::Embedding { group, provider_id, dim } => {
                    let (m, id) = embedded_matrix(*group, apps, prep, ctx)?;
                    if &id != provider_id {
                        return Err(CliError::Config(format!(
                            "vectorizer was fitted with embeddings from `{provider_id}`, not `{id}`"
                        )));
                    }
                    if m.n_cols() != *dim {
                        return Err(CliError::Data(format!("embedding dimension {} != fitted {dim}", m.n_cols())));
                    }
                    m
                }
                GroupModel::Tfidf { group, model } => model.transform(ids(apps), &token_docs(*group, apps, prep)?)?,
            });
        }
        let joined = if blocks.len() == 1 { blocks.pop().expect("one block") } else { concat(&blocks)? };
        match (&self.scaler, &self.pca) {
            (Some(s), Some(p)) => Ok(p.transform(&s.transform(&joined)?)?),
            _ => Ok(joined),
        }
    }
}
