//! Static feature extraction from Android APK files.
//!
//! Six feature groups are produced per app: name, requested permissions,
//! permission-guarded API call sites, DEX string pool, a launcher icon
//! descriptor and bundled third-party library prefixes.

mod archive;
pub mod axml;
pub mod dex;
mod error;
mod features;
pub mod icon;
mod libraries;
mod permission_map;

pub use archive::Apk;
pub use axml::{parse_axml, AttrValue, ManifestFacts};
pub use dex::DexFile;
pub use error::{ApkError, Result};
pub use features::{
    detect_libraries, extract_all, extract_dex_strings, extract_from, extract_restricted_apis, icon_descriptor,
    parse_manifest, ApkFeatures, Diagnostic, FEATURES_FORMAT_VERSION,
};
pub use icon::{IconDescriptor, ICON_DIM};
pub use libraries::{bundled_prefixes, load_prefixes, match_prefixes, parse_prefixes};
pub use permission_map::{valid_signature, PermissionApiMap};
