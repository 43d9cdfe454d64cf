use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive::Apk;
use crate::axml::{parse_axml, AttrValue, ManifestFacts};
use crate::dex::DexFile;
use crate::error::{ApkError, Result};
use crate::icon::{describe_png, locate_icon, IconDescriptor, ICON_DIM};
use crate::libraries::match_prefixes;
use crate::permission_map::PermissionApiMap;

pub const FEATURES_FORMAT_VERSION: u32 = 1;
const MANIFEST_ENTRY: &str = "AndroidManifest.xml";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

/// Everything extracted from one APK.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApkFeatures {
    pub format_version: u32,
    pub app_name: String,
    pub package: Option<String>,
    pub permissions: BTreeSet<String>,
    pub restricted_apis: BTreeMap<String, u32>,
    pub strings: BTreeSet<String>,
    pub icon_descriptor: Vec<f64>,
    pub libraries: BTreeSet<String>,
    #[serde(default)]
    pub diagnostics: Vec<Diagnostic>,
}

fn manifest_of(apk: &mut Apk) -> Result<ManifestFacts> {
    let bytes = apk.read(MANIFEST_ENTRY)?;
    parse_axml(&bytes)
}

fn dex_payloads(apk: &mut Apk) -> Result<Vec<(String, Vec<u8>)>> {
    let names = apk.dex_entries();
    if names.is_empty() {
        return Err(ApkError::NoDex);
    }
    names
        .into_iter()
        .map(|n| {
            let b = apk.read(&n)?;
            Ok((n, b))
        })
        .collect()
}

fn strings_of(dexes: &[DexFile]) -> BTreeSet<String> {
    dexes.iter().flat_map(|d| d.text_strings().map(str::to_string)).collect()
}

fn apis_of(dexes: &[DexFile], map: &PermissionApiMap) -> Result<BTreeMap<String, u32>> {
    let mut out: BTreeMap<String, u32> = BTreeMap::new();
    for d in dexes {
        for (method, n) in d.invoke_counts()? {
            if let Some(sig) = d.method_signature(method as usize) {
                if map.contains(&sig) {
                    *out.entry(sig).or_insert(0) += n;
                }
            }
        }
    }
    Ok(out)
}

fn libraries_of(dexes: &[DexFile], prefixes: &[String]) -> BTreeSet<String> {
    match_prefixes(dexes.iter().flat_map(|d| d.descriptors()), prefixes)
}

fn parse_all<'a>(payloads: &'a [(String, Vec<u8>)]) -> Result<Vec<DexFile<'a>>> {
    payloads.iter().map(|(_, b)| DexFile::parse(b)).collect()
}

fn icon_of(apk: &mut Apk, icon_attr: &AttrValue) -> IconDescriptor {
    let Some(name) = locate_icon(apk.names(), icon_attr).map(str::to_string) else {
        return IconDescriptor::zero("no launcher icon PNG in archive");
    };
    match apk.read(&name).map_err(|e| e.to_string()).and_then(|b| describe_png(&b)) {
        Ok(values) => IconDescriptor { values, warning: None },
        Err(e) => IconDescriptor::zero(format!("{name}: {e}")),
    }
}

/// Manifest facts of the APK at `path`.
pub fn parse_manifest(path: &Path) -> Result<ManifestFacts> {
    manifest_of(&mut Apk::open(path)?)
}

/// Union of the string pools of every DEX file, binary entries dropped.
pub fn extract_dex_strings(path: &Path) -> Result<BTreeSet<String>> {
    let payloads = dex_payloads(&mut Apk::open(path)?)?;
    Ok(strings_of(&parse_all(&payloads)?))
}

/// Invoke call sites per mapped API signature.
pub fn extract_restricted_apis(path: &Path, map: &PermissionApiMap) -> Result<BTreeMap<String, u32>> {
    let payloads = dex_payloads(&mut Apk::open(path)?)?;
    apis_of(&parse_all(&payloads)?, map)
}

/// Launcher icon descriptor; zero with a warning when absent or undecodable.
pub fn icon_descriptor(path: &Path) -> Result<IconDescriptor> {
    let mut apk = Apk::open(path)?;
    let attr = manifest_of(&mut apk).map(|m| m.icon).unwrap_or(AttrValue::Absent);
    Ok(icon_of(&mut apk, &attr))
}

pub fn detect_libraries(path: &Path, prefixes: &[String]) -> Result<BTreeSet<String>> {
    let payloads = dex_payloads(&mut Apk::open(path)?)?;
    Ok(libraries_of(&parse_all(&payloads)?, prefixes))
}

/// All feature groups. Only an unreadable file or a non-zip is fatal; any
/// other failure empties the affected field and adds a diagnostic.
/// `fallback_title` names the app when the manifest label is not inline.
pub fn extract_all(
    path: &Path,
    map: &PermissionApiMap,
    prefixes: &[String],
    fallback_title: Option<&str>,
) -> Result<ApkFeatures> {
    let mut apk = Apk::open(path)?;
    Ok(extract_from(&mut apk, map, prefixes, fallback_title))
}

/// [`extract_all`] over an archive already in memory.
pub fn extract_from(
    apk: &mut Apk,
    map: &PermissionApiMap,
    prefixes: &[String],
    fallback_title: Option<&str>,
) -> ApkFeatures {
    let mut diagnostics = Vec::new();
    let mut diag = |field: &str, message: String| {
        diagnostics.push(Diagnostic {
            field: field.to_string(),
            message,
        })
    };

    let manifest = match manifest_of(apk) {
        Ok(m) => Some(m),
        Err(e) => {
            diag("permissions", e.to_string());
            None
        }
    };
    let package = manifest.as_ref().and_then(|m| m.package.clone());
    let app_name = match manifest.as_ref().map(|m| m.label.clone()) {
        Some(AttrValue::Literal(s)) => s,
        other => {
            if let Some(AttrValue::ResourceRef(id)) = other {
                diag("app_name", ApkError::LabelIsResourceRef(id).to_string());
            }
            match (fallback_title, &package) {
                (Some(t), _) => t.to_string(),
                (None, Some(p)) => p.rsplit('.').next().unwrap_or(p).to_string(),
                (None, None) => {
                    diag("app_name", "no label, title or package name available".into());
                    String::new()
                }
            }
        }
    };

    let icon_attr = manifest.as_ref().map(|m| m.icon.clone()).unwrap_or(AttrValue::Absent);
    let icon = icon_of(apk, &icon_attr);
    if let Some(w) = &icon.warning {
        diag("icon_descriptor", w.clone());
    }
    debug_assert_eq!(icon.values.len(), ICON_DIM);

    let (strings, restricted_apis, libraries) = match dex_payloads(apk) {
        Err(e) => {
            for f in ["strings", "restricted_apis", "libraries"] {
                diag(f, e.to_string());
            }
            Default::default()
        }
        Ok(payloads) => match parse_all(&payloads) {
            Err(e) => {
                for f in ["strings", "restricted_apis", "libraries"] {
                    diag(f, e.to_string());
                }
                Default::default()
            }
            Ok(dexes) => {
                let apis = apis_of(&dexes, map).unwrap_or_else(|e| {
                    diag("restricted_apis", e.to_string());
                    BTreeMap::new()
                });
                (strings_of(&dexes), apis, libraries_of(&dexes, prefixes))
            }
        },
    };

    ApkFeatures {
        format_version: FEATURES_FORMAT_VERSION,
        app_name,
        package,
        permissions: manifest.map(|m| m.permissions).unwrap_or_default(),
        restricted_apis,
        strings,
        icon_descriptor: icon.values,
        libraries,
        diagnostics,
    }
}
