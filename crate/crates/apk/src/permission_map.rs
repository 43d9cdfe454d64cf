use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{ApkError, Result};

const BUNDLED: &str = include_str!("../resources/permission_api_map.csv");

/// API signature (`package.Class.method`) to the permission guarding it.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PermissionApiMap {
    entries: BTreeMap<String, String>,
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '$')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$')
}

/// At least one package-or-class segment and a method name.
pub fn valid_signature(sig: &str) -> bool {
    let parts: Vec<&str> = sig.split('.').collect();
    parts.len() >= 2 && parts.iter().all(|p| is_identifier(p))
}

impl PermissionApiMap {
    /// The starter map shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse_csv(BUNDLED).expect("bundled permission map is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ApkError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse_csv(&text)
    }

    /// CSV with header `api_signature,permission`.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| ApkError::MapFormat { line: 1, reason: e.to_string() })?
            .clone();
        if headers.len() != 2 || &headers[0] != "api_signature" || &headers[1] != "permission" {
            return Err(ApkError::MapFormat {
                line: 1,
                reason: "expected header `api_signature,permission`".into(),
            });
        }
        let mut entries = BTreeMap::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| ApkError::MapFormat {
                line: e.position().map_or(0, |p| p.line() as usize),
                reason: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let (sig, perm) = (&rec[0], &rec[1]);
            if !valid_signature(sig) {
                return Err(ApkError::MapFormat { line, reason: format!("invalid signature `{sig}`") });
            }
            if !valid_signature(perm) {
                return Err(ApkError::MapFormat { line, reason: format!("invalid permission `{perm}`") });
            }
            if entries.insert(sig.to_string(), perm.to_string()).is_some() {
                return Err(ApkError::MapFormat { line, reason: format!("duplicate signature `{sig}`") });
            }
        }
        Ok(Self { entries })
    }

    pub fn permission_for(&self, signature: &str) -> Option<&str> {
        self.entries.get(signature).map(String::as_str)
    }

    pub fn contains(&self, signature: &str) -> bool {
        self.entries.contains_key(signature)
    }

    /// Signatures in sorted order.
    pub fn signatures(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
