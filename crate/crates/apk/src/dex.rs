//! Dalvik executable parsing: string, type and method tables, and a walk of
//! every method body that counts invoke call sites.

use std::collections::BTreeMap;

use crate::error::{ApkError, Result};

const HEADER_SIZE: usize = 0x70;
const ENDIAN_CONSTANT: u32 = 0x1234_5678;

fn bad(offset: usize, reason: impl Into<String>) -> ApkError {
    ApkError::MalformedDex {
        offset,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy)]
struct Cursor<'a> {
    b: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn slice(&self, at: usize, n: usize) -> Result<&'a [u8]> {
        at.checked_add(n)
            .and_then(|end| self.b.get(at..end))
            .ok_or_else(|| bad(at, format!("read of {n} bytes past end of file")))
    }
    fn u16(&self, at: usize) -> Result<u16> {
        let s = self.slice(at, 2)?;
        Ok(u16::from_le_bytes([s[0], s[1]]))
    }
    fn u32(&self, at: usize) -> Result<u32> {
        let s = self.slice(at, 4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }
    /// Returns `(value, next offset)`.
    fn uleb128(&self, mut at: usize) -> Result<(u32, usize)> {
        let start = at;
        let mut value: u32 = 0;
        for shift in (0..35).step_by(7) {
            let byte = *self.b.get(at).ok_or_else(|| bad(start, "uleb128 runs past end of file"))?;
            at += 1;
            if shift == 28 && byte & 0xf0 != 0 {
                return Err(bad(start, "uleb128 exceeds 32 bits"));
            }
            value |= ((byte & 0x7f) as u32) << shift;
            if byte & 0x80 == 0 {
                return Ok((value, at));
            }
        }
        Err(bad(start, "uleb128 longer than 5 bytes"))
    }
}

/// One id table: `count` fixed-size records at `offset`.
fn table(c: &Cursor, size_at: usize, record: usize, name: &str) -> Result<(usize, usize)> {
    let count = c.u32(size_at)? as usize;
    let offset = c.u32(size_at + 4)? as usize;
    if count == 0 {
        return Ok((0, 0));
    }
    let bytes = count.checked_mul(record).ok_or_else(|| bad(size_at, format!("{name} count overflow")))?;
    if offset.checked_add(bytes).map_or(true, |e| e > c.b.len()) {
        return Err(bad(size_at, format!("{name} table ({count} entries at {offset}) outside file")));
    }
    Ok((count, offset))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodRef {
    pub class_idx: u16,
    pub name_idx: u32,
}

/// Class method definition with the offset of its code item (0 if abstract
/// or native).
#[derive(Debug, Clone, Copy)]
struct EncodedMethod {
    code_off: usize,
}

#[derive(Debug, Clone)]
pub struct DexFile<'a> {
    c: Cursor<'a>,
    /// Decoded string pool; `None` for entries dropped as binary.
    pub strings: Vec<Option<String>>,
    /// String index of each type descriptor.
    pub type_descriptors: Vec<u32>,
    pub methods: Vec<MethodRef>,
    class_defs: (usize, usize),
}

impl<'a> DexFile<'a> {
    pub fn parse(bytes: &'a [u8]) -> Result<Self> {
        let c = Cursor { b: bytes };
        if bytes.len() < HEADER_SIZE {
            return Err(ApkError::BadDexHeader(format!("{} bytes is shorter than the header", bytes.len())));
        }
        let magic = &bytes[..8];
        if &magic[..4] != b"dex\n" || magic[7] != 0 || !magic[4..7].iter().all(u8::is_ascii_digit) {
            return Err(ApkError::BadDexHeader(format!("bad magic {:02x?}", magic)));
        }
        let version: u32 = std::str::from_utf8(&magic[4..7]).unwrap().parse().unwrap();
        if !(35..=41).contains(&version) {
            return Err(ApkError::BadDexHeader(format!("unsupported version {version:03}")));
        }
        let endian = c.u32(0x28)?;
        if endian != ENDIAN_CONSTANT {
            return Err(ApkError::BadDexHeader(format!("endian tag 0x{endian:08x}")));
        }
        let header_size = c.u32(0x24)? as usize;
        if header_size != HEADER_SIZE {
            return Err(ApkError::BadDexHeader(format!("header size {header_size}")));
        }

        let (n_strings, strings_off) = table(&c, 0x38, 4, "string_ids")?;
        let mut strings = Vec::with_capacity(n_strings);
        for index in 0..n_strings {
            let off = c.u32(strings_off + 4 * index)? as usize;
            strings.push(decode_string(&c, index, off)?);
        }
        let (n_types, types_off) = table(&c, 0x40, 4, "type_ids")?;
        let (n_methods, methods_off) = table(&c, 0x58, 8, "method_ids")?;
        let class_defs = table(&c, 0x60, 32, "class_defs")?;

        let mut type_descriptors = Vec::with_capacity(n_types);
        for i in 0..n_types {
            let idx = c.u32(types_off + 4 * i)?;
            if idx as usize >= n_strings {
                return Err(bad(types_off + 4 * i, format!("type {i} names string {idx} of {n_strings}")));
            }
            type_descriptors.push(idx);
        }
        let mut methods = Vec::with_capacity(n_methods);
        for i in 0..n_methods {
            let at = methods_off + 8 * i;
            let class_idx = c.u16(at)?;
            let name_idx = c.u32(at + 4)?;
            if class_idx as usize >= n_types || name_idx as usize >= n_strings {
                return Err(bad(at, format!("method {i} has dangling class or name index")));
            }
            methods.push(MethodRef { class_idx, name_idx });
        }
        Ok(Self {
            c,
            strings,
            type_descriptors,
            methods,
            class_defs,
        })
    }

    pub fn string(&self, idx: u32) -> Option<&str> {
        self.strings.get(idx as usize)?.as_deref()
    }

    /// Text strings of the pool (binary entries excluded).
    pub fn text_strings(&self) -> impl Iterator<Item = &str> {
        self.strings.iter().filter_map(|s| s.as_deref())
    }

    /// Type descriptors, e.g. `Lcom/example/Foo;`.
    pub fn descriptors(&self) -> impl Iterator<Item = &str> {
        self.type_descriptors.iter().filter_map(|&i| self.string(i))
    }

    /// `package.Class.method` for a method id.
    pub fn method_signature(&self, idx: usize) -> Option<String> {
        let m = self.methods.get(idx)?;
        let desc = self.string(*self.type_descriptors.get(m.class_idx as usize)?)?;
        let class = descriptor_to_class(desc)?;
        Some(format!("{class}.{}", self.string(m.name_idx)?))
    }

    /// Number of invoke instructions targeting each method id.
    pub fn invoke_counts(&self) -> Result<BTreeMap<u32, u32>> {
        let mut counts = BTreeMap::new();
        let (n, off) = self.class_defs;
        for i in 0..n {
            let class_data_off = self.c.u32(off + 32 * i + 24)? as usize;
            if class_data_off == 0 {
                continue;
            }
            for m in self.class_methods(class_data_off)? {
                if m.code_off != 0 {
                    self.scan_code(m.code_off, &mut counts)?;
                }
            }
        }
        Ok(counts)
    }

    fn class_methods(&self, at: usize) -> Result<Vec<EncodedMethod>> {
        let c = &self.c;
        let (static_fields, p) = c.uleb128(at)?;
        let (instance_fields, p) = c.uleb128(p)?;
        let (direct, p) = c.uleb128(p)?;
        let (virt, mut p) = c.uleb128(p)?;
        for _ in 0..(static_fields as u64 + instance_fields as u64) {
            p = c.uleb128(p)?.1;
            p = c.uleb128(p)?.1;
        }
        let mut out = Vec::new();
        for group in [direct, virt] {
            let mut method_idx: u64 = 0;
            for _ in 0..group {
                let (diff, q) = c.uleb128(p)?;
                let (_access, q) = c.uleb128(q)?;
                let (code_off, q) = c.uleb128(q)?;
                method_idx += diff as u64;
                if method_idx >= self.methods.len() as u64 {
                    return Err(bad(p, format!("encoded method index {method_idx} out of range")));
                }
                out.push(EncodedMethod { code_off: code_off as usize });
                p = q;
            }
        }
        Ok(out)
    }

    fn scan_code(&self, at: usize, counts: &mut BTreeMap<u32, u32>) -> Result<()> {
        let insns_size = self.c.u32(at + 12)? as usize;
        let base = at + 16;
        let code = self.c.slice(base, insns_size.checked_mul(2).ok_or_else(|| bad(at, "code size overflow"))?)?;
        let unit = |i: usize| u16::from_le_bytes([code[2 * i], code[2 * i + 1]]);
        let mut pc = 0usize;
        while pc < insns_size {
            let first = unit(pc);
            let op = (first & 0xff) as u8;
            let width = if op == 0x00 && first != 0x0000 {
                payload_width(first, pc, insns_size, &unit).ok_or_else(|| bad(base + 2 * pc, "truncated payload"))?
            } else {
                opcode_width(op).ok_or_else(|| bad(base + 2 * pc, format!("unused opcode 0x{op:02x}")))?
            };
            if pc + width > insns_size {
                return Err(bad(base + 2 * pc, format!("instruction 0x{op:02x} runs past end of code")));
            }
            if is_method_invoke(op) {
                let method = unit(pc + 1) as u32;
                if method as usize >= self.methods.len() {
                    return Err(bad(base + 2 * pc, format!("invoke of unknown method {method}")));
                }
                *counts.entry(method).or_insert(0) += 1;
            }
            pc += width;
        }
        Ok(())
    }
}

fn payload_width(first: u16, pc: usize, len: usize, unit: &dyn Fn(usize) -> u16) -> Option<usize> {
    let need = |n: usize| (pc + n <= len).then_some(());
    match first {
        0x0100 => {
            need(2)?;
            Some(unit(pc + 1) as usize * 2 + 4)
        }
        0x0200 => {
            need(2)?;
            Some(unit(pc + 1) as usize * 4 + 2)
        }
        0x0300 => {
            need(4)?;
            let elem = unit(pc + 1) as usize;
            let n = unit(pc + 2) as usize | (unit(pc + 3) as usize) << 16;
            Some((n.checked_mul(elem)? + 1) / 2 + 4)
        }
        // Any other high byte under opcode 0x00 is still a nop.
        _ => Some(1),
    }
}

/// invoke-virtual/super/direct/static/interface, their `/range` forms, and
/// invoke-polymorphic. invoke-custom references call sites, not methods.
fn is_method_invoke(op: u8) -> bool {
    matches!(op, 0x6e..=0x72 | 0x74..=0x78 | 0xfa | 0xfb)
}

/// Instruction width in 16-bit code units; `None` for unused opcodes.
pub fn opcode_width(op: u8) -> Option<usize> {
    Some(match op {
        0x00 | 0x01 | 0x04 | 0x07 | 0x0a..=0x12 | 0x1d | 0x1e | 0x21 | 0x27 | 0x28 => 1,
        0x7b..=0x8f | 0xb0..=0xcf => 1,
        0x02 | 0x05 | 0x08 | 0x13 | 0x15 | 0x16 | 0x19 | 0x1a | 0x1c | 0x1f | 0x20 | 0x22 | 0x23 | 0x29 => 2,
        0x2d..=0x3d | 0x44..=0x6d | 0x90..=0xaf | 0xd0..=0xe2 | 0xfe | 0xff => 2,
        0x03 | 0x06 | 0x09 | 0x14 | 0x17 | 0x1b | 0x24..=0x26 | 0x2a..=0x2c => 3,
        0x6e..=0x72 | 0x74..=0x78 | 0xfc | 0xfd => 3,
        0xfa | 0xfb => 4,
        0x18 => 5,
        0x3e..=0x43 | 0x73 | 0x79 | 0x7a | 0xe3..=0xf9 => return None,
    })
}

/// `Lcom/example/Foo;` to `com.example.Foo`. Arrays and primitives yield
/// `None`.
pub fn descriptor_to_class(desc: &str) -> Option<String> {
    let inner = desc.strip_prefix('L')?.strip_suffix(';')?;
    if inner.is_empty() {
        return None;
    }
    Some(inner.replace('/', "."))
}

fn decode_string(c: &Cursor, index: usize, off: usize) -> Result<Option<String>> {
    if off >= c.b.len() {
        return Err(ApkError::StringOutOfBounds { index, offset: off });
    }
    let oob = || ApkError::StringOutOfBounds { index, offset: off };
    let (utf16_len, mut p) = c.uleb128(off).map_err(|_| oob())?;
    let mut units: Vec<u16> = Vec::with_capacity((utf16_len as usize).min(c.b.len()));
    loop {
        let b0 = *c.b.get(p).ok_or_else(oob)?;
        if b0 == 0 {
            break;
        }
        let unit = if b0 < 0x80 {
            p += 1;
            b0 as u16
        } else if b0 & 0xe0 == 0xc0 {
            let b1 = *c.b.get(p + 1).ok_or_else(oob)?;
            if b1 & 0xc0 != 0x80 {
                return Err(bad(p, format!("string {index}: bad MUTF-8 continuation")));
            }
            p += 2;
            ((b0 as u16 & 0x1f) << 6) | (b1 as u16 & 0x3f)
        } else if b0 & 0xf0 == 0xe0 {
            let b1 = *c.b.get(p + 1).ok_or_else(oob)?;
            let b2 = *c.b.get(p + 2).ok_or_else(oob)?;
            if b1 & 0xc0 != 0x80 || b2 & 0xc0 != 0x80 {
                return Err(bad(p, format!("string {index}: bad MUTF-8 continuation")));
            }
            p += 3;
            ((b0 as u16 & 0x0f) << 12) | ((b1 as u16 & 0x3f) << 6) | (b2 as u16 & 0x3f)
        } else {
            return Err(bad(p, format!("string {index}: invalid MUTF-8 lead byte 0x{b0:02x}")));
        };
        units.push(unit);
    }
    if units.len() != utf16_len as usize {
        return Err(bad(off, format!("string {index}: declared {utf16_len} UTF-16 units, found {}", units.len())));
    }
    if units.contains(&0) {
        return Ok(None);
    }
    Ok(Some(String::from_utf16_lossy(&units)))
}
