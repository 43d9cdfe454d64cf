//! Per-app feature files on disk.

use std::path::{Path, PathBuf};

use appcat_apk::ApkFeatures;

use crate::error::{CliError, Result};

/// File stem for an app id; anything outside `[A-Za-z0-9._-]` becomes `_`.
pub fn file_stem(app_id: &str) -> String {
    app_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

/// Stable pretty JSON with a trailing newline.
pub fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes") + "\n"
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone)]
pub struct FeatureStore {
    dir: PathBuf,
}

impl FeatureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, app_id: &str) -> PathBuf {
        self.dir.join(format!("{}.json", file_stem(app_id)))
    }

    pub fn save(&self, app_id: &str, f: &ApkFeatures) -> Result<PathBuf> {
        let path = self.path_for(app_id);
        write_file(&path, &to_json(f))?;
        Ok(path)
    }

    pub fn load(&self, app_id: &str) -> Result<ApkFeatures> {
        let path = self.path_for(app_id);
        if !path.exists() {
            return Err(CliError::Data(format!(
                "no feature file for app `{app_id}` (expected {}); run `extract` first",
                path.display()
            )));
        }
        read_json(&path)
    }

    pub fn load_many<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<ApkFeatures>> {
        ids.iter().map(|id| self.load(id.as_ref())).collect()
    }
}
