use std::collections::BTreeSet;
use std::path::Path;

use crate::dex::descriptor_to_class;
use crate::error::{ApkError, Result};

const BUNDLED: &str = include_str!("../resources/library_prefixes.txt");

/// Known library package prefixes. Lines starting with `#` are comments.
pub fn parse_prefixes(text: &str) -> Vec<String> {
    let mut out: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    out.sort();
    out.dedup();
    out
}

pub fn bundled_prefixes() -> Vec<String> {
    parse_prefixes(BUNDLED)
}

pub fn load_prefixes(path: &Path) -> Result<Vec<String>> {
    std::fs::read_to_string(path)
        .map(|t| parse_prefixes(&t))
        .map_err(|e| ApkError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
}

/// Prefixes matched by at least one class descriptor. `com.foo` matches
/// `com.foo.Bar` and `com.foo.x.Y` but not `com.foobar.Z`.
pub fn match_prefixes<'a, I>(descriptors: I, prefixes: &[String]) -> BTreeSet<String>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut found = BTreeSet::new();
    if prefixes.is_empty() {
        return found;
    }
    for desc in descriptors {
        let Some(class) = descriptor_to_class(desc) else { continue };
        for p in prefixes {
            if class.len() > p.len() && class.starts_with(p.as_str()) && class.as_bytes()[p.len()] == b'.' {
                found.insert(p.clone());
            }
        }
    }
    found
}
