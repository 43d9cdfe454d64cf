use std::io::{Cursor, Read};
use std::path::Path;

use zip::ZipArchive;

use crate::error::{ApkError, Result};

/// Entries larger than this are refused rather than inflated.
const MAX_ENTRY_BYTES: u64 = 512 * 1024 * 1024;

/// An APK held in memory.
pub struct Apk {
    zip: ZipArchive<Cursor<Vec<u8>>>,
    names: Vec<String>,
}

impl Apk {
    pub fn open(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| ApkError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_bytes(bytes)
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        let zip = ZipArchive::new(Cursor::new(bytes)).map_err(|e| ApkError::NotAZip(e.to_string()))?;
        let mut names: Vec<String> = zip.file_names().map(str::to_string).collect();
        names.sort();
        Ok(Self { zip, names })
    }

    /// Entry names in sorted order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).is_ok()
    }

    pub fn read(&mut self, name: &str) -> Result<Vec<u8>> {
        let entry_err = |e: &dyn std::fmt::Display| ApkError::Entry {
            entry: name.to_string(),
            message: e.to_string(),
        };
        let mut file = match self.zip.by_name(name) {
            Ok(f) => f,
            Err(zip::result::ZipError::FileNotFound) => return Err(ApkError::MissingEntry(name.to_string())),
            Err(e) => return Err(entry_err(&e)),
        };
        if file.size() > MAX_ENTRY_BYTES {
            return Err(entry_err(&format!("declared size {} exceeds limit", file.size())));
        }
        let mut out = Vec::with_capacity(file.size().min(1 << 24) as usize);
        (&mut file)
            .take(MAX_ENTRY_BYTES + 1)
            .read_to_end(&mut out)
            .map_err(|e| entry_err(&e))?;
        if out.len() as u64 > MAX_ENTRY_BYTES {
            return Err(entry_err(&"inflated size exceeds limit"));
        }
        Ok(out)
    }

    /// `classes.dex`, `classes2.dex`, ... in numeric order.
    pub fn dex_entries(&self) -> Vec<String> {
        let mut dex: Vec<(u32, String)> = self
            .names
            .iter()
            .filter_map(|n| {
                let mid = n.strip_prefix("classes")?.strip_suffix(".dex")?;
                let num = if mid.is_empty() { 1 } else { mid.parse::<u32>().ok().filter(|&k| k >= 2)? };
                Some((num, n.clone()))
            })
            .collect();
        dex.sort();
        dex.into_iter().map(|(_, n)| n).collect()
    }
}
