//! Android binary XML (the compiled `AndroidManifest.xml`).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{ApkError, Result};

const RES_STRING_POOL_TYPE: u16 = 0x0001;
const RES_XML_TYPE: u16 = 0x0003;
const RES_XML_START_NAMESPACE_TYPE: u16 = 0x0100;
const RES_XML_END_NAMESPACE_TYPE: u16 = 0x0101;
const RES_XML_START_ELEMENT_TYPE: u16 = 0x0102;
const RES_XML_END_ELEMENT_TYPE: u16 = 0x0103;
const RES_XML_CDATA_TYPE: u16 = 0x0104;
const RES_XML_RESOURCE_MAP_TYPE: u16 = 0x0180;

const UTF8_FLAG: u32 = 1 << 8;
const NO_INDEX: u32 = 0xffff_ffff;

const ATTR_LABEL: u32 = 0x0101_0001;
const ATTR_ICON: u32 = 0x0101_0002;
const ATTR_NAME: u32 = 0x0101_0003;

const TYPE_REFERENCE: u8 = 0x01;
const TYPE_STRING: u8 = 0x03;
const TYPE_DYNAMIC_REFERENCE: u8 = 0x07;

/// A manifest attribute that may be stored inline or as a resource id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum AttrValue {
    Literal(String),
    ResourceRef(u32),
    Absent,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ManifestFacts {
    pub package: Option<String>,
    pub label: AttrValue,
    pub icon: AttrValue,
    pub permissions: BTreeSet<String>,
    /// Fully qualified activity, service, receiver and provider names.
    pub components: Vec<String>,
}

impl Default for AttrValue {
    fn default() -> Self {
        AttrValue::Absent
    }
}

impl ManifestFacts {
    /// The label if it is stored inline.
    pub fn literal_label(&self) -> Result<Option<&str>> {
        match &self.label {
            AttrValue::Literal(s) => Ok(Some(s)),
            AttrValue::ResourceRef(id) => Err(ApkError::LabelIsResourceRef(*id)),
            AttrValue::Absent => Ok(None),
        }
    }
}

fn malformed(offset: usize, reason: impl Into<String>) -> ApkError {
    ApkError::MalformedChunk {
        offset,
        reason: reason.into(),
    }
}

struct Reader<'a> {
    b: &'a [u8],
}

impl<'a> Reader<'a> {
    fn u8(&self, at: usize) -> Result<u8> {
        self.b.get(at).copied().ok_or_else(|| malformed(at, "read past end"))
    }
    fn u16(&self, at: usize) -> Result<u16> {
        match self.b.get(at..at.checked_add(2).ok_or_else(|| malformed(at, "offset overflow"))?) {
            Some(s) => Ok(u16::from_le_bytes([s[0], s[1]])),
            None => Err(malformed(at, "read past end")),
        }
    }
    fn u32(&self, at: usize) -> Result<u32> {
        match self.b.get(at..at.checked_add(4).ok_or_else(|| malformed(at, "offset overflow"))?) {
            Some(s) => Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]])),
            None => Err(malformed(at, "read past end")),
        }
    }
}

struct ChunkHeader {
    kind: u16,
    header_size: usize,
    size: usize,
}

fn chunk_at(r: &Reader, at: usize, limit: usize) -> Result<ChunkHeader> {
    if at + 8 > limit.min(r.b.len()) {
        return Err(malformed(at, "truncated chunk header"));
    }
    let kind = r.u16(at)?;
    let header_size = r.u16(at + 2)? as usize;
    let size = r.u32(at + 4)? as usize;
    if header_size < 8 {
        return Err(malformed(at, format!("header size {header_size} < 8")));
    }
    if size < header_size {
        return Err(malformed(at, format!("chunk size {size} < header size {header_size}")));
    }
    if at.checked_add(size).map_or(true, |end| end > limit) {
        return Err(malformed(at, format!("chunk of {size} bytes overruns its container")));
    }
    Ok(ChunkHeader { kind, header_size, size })
}

/// Decoded string pool.
#[derive(Debug, Clone, Default)]
pub struct StringPool {
    pub strings: Vec<String>,
    pub utf8: bool,
}

impl StringPool {
    fn get(&self, idx: u32) -> Option<&str> {
        if idx == NO_INDEX {
            return None;
        }
        self.strings.get(idx as usize).map(String::as_str)
    }
}

fn parse_string_pool(r: &Reader, at: usize, h: &ChunkHeader) -> Result<StringPool> {
    if h.header_size < 28 {
        return Err(malformed(at, "string pool header shorter than 28 bytes"));
    }
    let count = r.u32(at + 8)? as usize;
    let style_count = r.u32(at + 12)? as usize;
    let flags = r.u32(at + 16)?;
    let strings_start = r.u32(at + 20)? as usize;
    let end = at + h.size;
    let offsets_at = at + h.header_size;
    let table_bytes = count
        .checked_add(style_count)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| malformed(at + 8, "string count overflow"))?;
    if offsets_at + table_bytes > end {
        return Err(malformed(at + 8, format!("{count} string offsets do not fit in pool")));
    }
    let data_at = at
        .checked_add(strings_start)
        .filter(|&d| d <= end)
        .ok_or_else(|| malformed(at + 20, "strings start outside pool"))?;
    let utf8 = flags & UTF8_FLAG != 0;
    let pool = Reader { b: &r.b[..end] };
    let mut strings = Vec::with_capacity(count);
    for i in 0..count {
        let off = r.u32(offsets_at + 4 * i)? as usize;
        let s_at = data_at
            .checked_add(off)
            .ok_or_else(|| malformed(offsets_at + 4 * i, "string offset overflow"))?;
        strings.push(if utf8 {
            decode_utf8_entry(&pool, s_at)?
        } else {
            decode_utf16_entry(&pool, s_at)?
        });
    }
    Ok(StringPool { strings, utf8 })
}

fn decode_utf16_entry(r: &Reader, at: usize) -> Result<String> {
    let first = r.u16(at)? as usize;
    let (len, mut p) = if first & 0x8000 != 0 {
        (((first & 0x7fff) << 16) | r.u16(at + 2)? as usize, at + 4)
    } else {
        (first, at + 2)
    };
    let bytes = len.checked_mul(2).ok_or_else(|| malformed(at, "string length overflow"))?;
    if p.checked_add(bytes).map_or(true, |e| e > r.b.len()) {
        return Err(malformed(at, format!("UTF-16 string of {len} units overruns pool")));
    }
    let mut units = Vec::with_capacity(len);
    for _ in 0..len {
        units.push(r.u16(p)?);
        p += 2;
    }
    Ok(String::from_utf16_lossy(&units))
}

fn decode_utf8_entry(r: &Reader, at: usize) -> Result<String> {
    let read_len = |p: usize| -> Result<(usize, usize)> {
        let a = r.u8(p)? as usize;
        if a & 0x80 != 0 {
            Ok((((a & 0x7f) << 8) | r.u8(p + 1)? as usize, p + 2))
        } else {
            Ok((a, p + 1))
        }
    };
    let (_utf16_len, p) = read_len(at)?;
    let (len, p) = read_len(p)?;
    let bytes = r
        .b
        .get(p..p + len)
        .ok_or_else(|| malformed(at, format!("UTF-8 string of {len} bytes overruns pool")))?;
    Ok(String::from_utf8_lossy(bytes).into_owned())
}

struct Attribute {
    name: u32,
    raw: u32,
    data_type: u8,
    data: u32,
}

/// Parses a binary XML document and collects manifest facts.
pub fn parse_axml(bytes: &[u8]) -> Result<ManifestFacts> {
    let r = Reader { b: bytes };
    let root = chunk_at(&r, 0, bytes.len())?;
    if root.kind != RES_XML_TYPE {
        return Err(malformed(0, format!("expected XML chunk type 0x0003, found 0x{:04x}", root.kind)));
    }
    let end = root.size;
    let mut pool: Option<StringPool> = None;
    let mut res_map: Vec<u32> = Vec::new();
    let mut facts = ManifestFacts::default();
    let mut stack: Vec<String> = Vec::new();

    let mut at = root.header_size;
    while at < end {
        let h = chunk_at(&r, at, end)?;
        match h.kind {
            RES_STRING_POOL_TYPE => {
                if pool.is_some() {
                    return Err(malformed(at, "second string pool"));
                }
                pool = Some(parse_string_pool(&r, at, &h)?);
            }
            RES_XML_RESOURCE_MAP_TYPE => {
                let n = (h.size - h.header_size) / 4;
                res_map = (0..n)
                    .map(|i| r.u32(at + h.header_size + 4 * i))
                    .collect::<Result<_>>()?;
            }
            RES_XML_START_ELEMENT_TYPE => {
                let pool = pool.as_ref().ok_or_else(|| malformed(at, "element before string pool"))?;
                let ext = at + h.header_size;
                if ext + 20 > at + h.size {
                    return Err(malformed(at, "start element too short"));
                }
                let name_idx = r.u32(ext + 4)?;
                let attr_start = r.u16(ext + 8)? as usize;
                let attr_size = r.u16(ext + 10)? as usize;
                let attr_count = r.u16(ext + 12)? as usize;
                if attr_size < 20 {
                    return Err(malformed(ext + 10, format!("attribute size {attr_size} < 20")));
                }
                if ext + attr_start + attr_count * attr_size > at + h.size {
                    return Err(malformed(ext + 12, format!("{attr_count} attributes overrun element")));
                }
                let element = pool
                    .get(name_idx)
                    .ok_or_else(|| malformed(ext + 4, format!("element name index {name_idx} out of range")))?
                    .to_string();
                let mut attrs = Vec::with_capacity(attr_count);
                for i in 0..attr_count {
                    let a = ext + attr_start + i * attr_size;
                    attrs.push(Attribute {
                        name: r.u32(a + 4)?,
                        raw: r.u32(a + 8)?,
                        data_type: r.u8(a + 15)?,
                        data: r.u32(a + 16)?,
                    });
                }
                visit_element(&mut facts, &stack, &element, &attrs, pool, &res_map, at)?;
                stack.push(element);
            }
            RES_XML_END_ELEMENT_TYPE => {
                if stack.pop().is_none() {
                    return Err(malformed(at, "end element without start"));
                }
            }
            RES_XML_START_NAMESPACE_TYPE | RES_XML_END_NAMESPACE_TYPE | RES_XML_CDATA_TYPE => {}
            _ => {}
        }
        at += h.size;
    }
    if pool.is_none() {
        return Err(malformed(root.header_size, "document has no string pool"));
    }
    qualify_components(&mut facts);
    Ok(facts)
}

fn attr_is(attr: &Attribute, want_name: &str, want_id: u32, pool: &StringPool, res_map: &[u32]) -> bool {
    if res_map.get(attr.name as usize) == Some(&want_id) {
        return true;
    }
    pool.get(attr.name) == Some(want_name)
}

fn attr_value(attr: &Attribute, pool: &StringPool, at: usize) -> Result<AttrValue> {
    match attr.data_type {
        TYPE_REFERENCE | TYPE_DYNAMIC_REFERENCE => Ok(AttrValue::ResourceRef(attr.data)),
        _ if attr.raw != NO_INDEX => pool
            .get(attr.raw)
            .map(|s| AttrValue::Literal(s.to_string()))
            .ok_or_else(|| malformed(at, format!("attribute string index {} out of range", attr.raw))),
        TYPE_STRING => pool
            .get(attr.data)
            .map(|s| AttrValue::Literal(s.to_string()))
            .ok_or_else(|| malformed(at, format!("attribute string index {} out of range", attr.data))),
        _ => Ok(AttrValue::Absent),
    }
}

fn visit_element(
    facts: &mut ManifestFacts,
    stack: &[String],
    element: &str,
    attrs: &[Attribute],
    pool: &StringPool,
    res_map: &[u32],
    at: usize,
) -> Result<()> {
    let find = |name: &str, id: u32| -> Result<AttrValue> {
        match attrs.iter().find(|a| attr_is(a, name, id, pool, res_map)) {
            Some(a) => attr_value(a, pool, at),
            None => Ok(AttrValue::Absent),
        }
    };
    let parent = stack.last().map(String::as_str);
    match element {
        "manifest" if stack.is_empty() => {
            if let Some(a) = attrs.iter().find(|a| pool.get(a.name) == Some("package")) {
                if let AttrValue::Literal(p) = attr_value(a, pool, at)? {
                    facts.package = Some(p);
                }
            }
        }
        "uses-permission" | "uses-permission-sdk-23" | "uses-permission-sdk-m" => {
            if let AttrValue::Literal(p) = find("name", ATTR_NAME)? {
                let p = p.trim();
                if !p.is_empty() {
                    facts.permissions.insert(p.to_string());
                }
            }
        }
        "application" if parent == Some("manifest") => {
            facts.label = find("label", ATTR_LABEL)?;
            facts.icon = find("icon", ATTR_ICON)?;
        }
        "activity" | "activity-alias" | "service" | "receiver" | "provider" if parent == Some("application") => {
            if let AttrValue::Literal(n) = find("name", ATTR_NAME)? {
                facts.components.push(n);
            }
        }
        _ => {}
    }
    Ok(())
}

/// Relative names (`.Main`, `Main`) are resolved against the package, for
/// components and permissions alike.
fn qualify(pkg: &str, name: &str) -> String {
    if name.starts_with('.') {
        format!("{pkg}{name}")
    } else if !name.contains('.') {
        format!("{pkg}.{name}")
    } else {
        name.to_string()
    }
}

fn qualify_components(facts: &mut ManifestFacts) {
    let Some(pkg) = facts.package.clone() else { return };
    for c in &mut facts.components {
        *c = qualify(&pkg, c);
    }
    facts.permissions = facts.permissions.iter().map(|p| qualify(&pkg, p)).collect();
}
