//! Fixture writers for the APK parsers: binary XML, DEX, PNG and ZIP
//! packing, the golden fixture set with its expectations, and a byte
//! mutation fuzzer.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

pub const NO_INDEX: u32 = 0xffff_ffff;
pub const ANDROID_NS: &str = "http://schemas.android.com/apk/res/android";

// ---------------------------------------------------------------- binary XML

pub enum Label {
    Literal(String),
    Ref(u32),
}

pub struct ManifestSpec {
    pub package: String,
    pub label: Label,
    pub icon_ref: Option<u32>,
    pub permissions: Vec<String>,
    pub activities: Vec<String>,
    pub utf8: bool,
}

struct Attr {
    ns: u32,
    name: u32,
    raw: u32,
    data_type: u8,
    data: u32,
}

#[derive(Default)]
struct Pool {
    strings: Vec<String>,
}

impl Pool {
    fn idx(&mut self, s: &str) -> u32 {
        if let Some(i) = self.strings.iter().position(|x| x == s) {
            return i as u32;
        }
        self.strings.push(s.to_string());
        (self.strings.len() - 1) as u32
    }
}

fn push_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}
fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn string_pool_chunk(strings: &[String], utf8: bool) -> Vec<u8> {
    let mut data = Vec::new();
    let mut offsets = Vec::new();
    for s in strings {
        offsets.push(data.len() as u32);
        if utf8 {
            let n16 = s.encode_utf16().count();
            let n8 = s.len();
            for n in [n16, n8] {
                if n < 0x80 {
                    data.push(n as u8);
                } else {
                    data.push(0x80 | (n >> 8) as u8);
                    data.push(n as u8);
                }
            }
            data.extend_from_slice(s.as_bytes());
            data.push(0);
        } else {
            let units: Vec<u16> = s.encode_utf16().collect();
            push_u16(&mut data, units.len() as u16);
            for u in units {
                push_u16(&mut data, u);
            }
            push_u16(&mut data, 0);
        }
    }
    while data.len() % 4 != 0 {
        data.push(0);
    }
    let header = 28u32;
    let strings_start = header + 4 * strings.len() as u32;
    let size = strings_start + data.len() as u32;
    let mut out = Vec::new();
    push_u16(&mut out, 0x0001);
    push_u16(&mut out, header as u16);
    push_u32(&mut out, size);
    push_u32(&mut out, strings.len() as u32);
    push_u32(&mut out, 0);
    push_u32(&mut out, if utf8 { 1 << 8 } else { 0 });
    push_u32(&mut out, strings_start);
    push_u32(&mut out, 0);
    for o in offsets {
        push_u32(&mut out, o);
    }
    out.extend_from_slice(&data);
    out
}

fn node_header(out: &mut Vec<u8>, kind: u16, size: u32) {
    push_u16(out, kind);
    push_u16(out, 16);
    push_u32(out, size);
    push_u32(out, 1); // line number
    push_u32(out, NO_INDEX); // comment
}

fn start_element(name: u32, attrs: &[Attr]) -> Vec<u8> {
    let mut out = Vec::new();
    node_header(&mut out, 0x0102, 16 + 20 + 20 * attrs.len() as u32);
    push_u32(&mut out, NO_INDEX);
    push_u32(&mut out, name);
    push_u16(&mut out, 20);
    push_u16(&mut out, 20);
    push_u16(&mut out, attrs.len() as u16);
    push_u16(&mut out, 0);
    push_u16(&mut out, 0);
    push_u16(&mut out, 0);
    for a in attrs {
        push_u32(&mut out, a.ns);
        push_u32(&mut out, a.name);
        push_u32(&mut out, a.raw);
        push_u16(&mut out, 8);
        out.push(0);
        out.push(a.data_type);
        push_u32(&mut out, a.data);
    }
    out
}

fn end_element(name: u32) -> Vec<u8> {
    let mut out = Vec::new();
    node_header(&mut out, 0x0103, 24);
    push_u32(&mut out, NO_INDEX);
    push_u32(&mut out, name);
    out
}

fn namespace(kind: u16, prefix: u32, uri: u32) -> Vec<u8> {
    let mut out = Vec::new();
    node_header(&mut out, kind, 24);
    push_u32(&mut out, prefix);
    push_u32(&mut out, uri);
    out
}

/// Compiled manifest in the layout aapt produces: attribute names first in
/// the pool, matched by a resource map.
pub fn build_axml(spec: &ManifestSpec) -> Vec<u8> {
    let mut pool = Pool::default();
    let a_name = pool.idx("name");
    let a_label = pool.idx("label");
    let a_icon = pool.idx("icon");
    let res_map = [0x0101_0003u32, 0x0101_0001, 0x0101_0002];
    let ns_prefix = pool.idx("android");
    let ns_uri = pool.idx(ANDROID_NS);
    let a_package = pool.idx("package");
    let e_manifest = pool.idx("manifest");
    let e_perm = pool.idx("uses-permission");
    let e_app = pool.idx("application");
    let e_activity = pool.idx("activity");

    let string_attr = |pool: &mut Pool, ns: u32, name: u32, value: &str| {
        let v = pool.idx(value);
        Attr { ns, name, raw: v, data_type: 0x03, data: v }
    };
    let mut body: Vec<u8> = Vec::new();
    body.extend(namespace(0x0100, ns_prefix, ns_uri));
    let pkg = string_attr(&mut pool, NO_INDEX, a_package, &spec.package);
    body.extend(start_element(e_manifest, &[pkg]));
    for p in &spec.permissions {
        let a = string_attr(&mut pool, ns_uri, a_name, p);
        body.extend(start_element(e_perm, &[a]));
        body.extend(end_element(e_perm));
    }
    let mut app_attrs = Vec::new();
    if let Some(icon) = spec.icon_ref {
        app_attrs.push(Attr { ns: ns_uri, name: a_icon, raw: NO_INDEX, data_type: 0x01, data: icon });
    }
    app_attrs.push(match &spec.label {
        Label::Literal(s) => string_attr(&mut pool, ns_uri, a_label, s),
        Label::Ref(id) => Attr { ns: ns_uri, name: a_label, raw: NO_INDEX, data_type: 0x01, data: *id },
    });
    body.extend(start_element(e_app, &app_attrs));
    for act in &spec.activities {
        let a = string_attr(&mut pool, ns_uri, a_name, act);
        body.extend(start_element(e_activity, &[a]));
        body.extend(end_element(e_activity));
    }
    body.extend(end_element(e_app));
    body.extend(end_element(e_manifest));
    body.extend(namespace(0x0101, ns_prefix, ns_uri));

    let pool_chunk = string_pool_chunk(&pool.strings, spec.utf8);
    let mut map_chunk = Vec::new();
    push_u16(&mut map_chunk, 0x0180);
    push_u16(&mut map_chunk, 8);
    push_u32(&mut map_chunk, 8 + 4 * res_map.len() as u32);
    for id in res_map {
        push_u32(&mut map_chunk, id);
    }

    let size = 8 + pool_chunk.len() + map_chunk.len() + body.len();
    let mut out = Vec::with_capacity(size);
    push_u16(&mut out, 0x0003);
    push_u16(&mut out, 8);
    push_u32(&mut out, size as u32);
    out.extend(pool_chunk);
    out.extend(map_chunk);
    out.extend(body);
    out
}

// ----------------------------------------------------------------------- DEX

#[derive(Clone, Copy)]
pub enum Invoke {
    Virtual,
    VirtualRange,
    Static,
    Direct,
    Interface,
}

pub struct MethodSpec {
    pub name: String,
    /// `(class descriptor, method name, form)` per call site.
    pub calls: Vec<(String, String, Invoke)>,
    /// Strings loaded with `const-string`.
    pub const_strings: Vec<String>,
    /// Appends a packed-switch payload after the return.
    pub with_payload: bool,
}

pub struct ClassSpec {
    pub descriptor: String,
    pub methods: Vec<MethodSpec>,
}

#[derive(Default)]
pub struct DexSpec {
    pub classes: Vec<ClassSpec>,
    pub extra_strings: Vec<String>,
}

fn uleb(out: &mut Vec<u8>, mut v: u32) {
    loop {
        let b = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(b);
            return;
        }
        out.push(b | 0x80);
    }
}

fn mutf8(s: &str) -> Vec<u8> {
    let mut out = Vec::new();
    for u in s.encode_utf16() {
        match u {
            0x0001..=0x007f => out.push(u as u8),
            0x0000 | 0x0080..=0x07ff => {
                out.push(0xc0 | (u >> 6) as u8);
                out.push(0x80 | (u & 0x3f) as u8);
            }
            _ => {
                out.push(0xe0 | (u >> 12) as u8);
                out.push(0x80 | ((u >> 6) & 0x3f) as u8);
                out.push(0x80 | (u & 0x3f) as u8);
            }
        }
    }
    out
}

fn adler32(data: &[u8]) -> u32 {
    let (mut a, mut b) = (1u32, 0u32);
    for &x in data {
        a = (a + x as u32) % 65521;
        b = (b + a) % 65521;
    }
    (b << 16) | a
}

fn align4(out: &mut Vec<u8>) {
    while out.len() % 4 != 0 {
        out.push(0);
    }
}

impl DexSpec {
    /// Every string the pool will hold.
    pub fn pool(&self) -> BTreeSet<String> {
        let mut s: BTreeSet<String> = self.extra_strings.iter().cloned().collect();
        if self.classes.is_empty() {
            return s;
        }
        s.insert("V".into());
        s.insert("Ljava/lang/Object;".into());
        for c in &self.classes {
            s.insert(c.descriptor.clone());
            for m in &c.methods {
                s.insert(m.name.clone());
                for (cls, name, _) in &m.calls {
                    s.insert(cls.clone());
                    s.insert(name.clone());
                }
                s.extend(m.const_strings.iter().cloned());
            }
        }
        s
    }

    pub fn build(&self) -> Vec<u8> {
        let mut strings: Vec<String> = self.pool().into_iter().collect();
        strings.sort_by(|a, b| a.encode_utf16().cmp(b.encode_utf16()));
        let sidx = |s: &str| strings.iter().position(|x| x == s).unwrap() as u32;

        let mut types: Vec<u32> = strings
            .iter()
            .enumerate()
            .filter(|(_, s)| s.starts_with('L') && s.ends_with(';') || s.as_str() == "V")
            .filter(|(_, s)| !self.extra_strings.contains(s))
            .map(|(i, _)| i as u32)
            .collect();
        types.sort();
        let tidx = |s: &str| types.iter().position(|&t| t == sidx(s)).unwrap() as u16;

        let mut methods: Vec<(u16, u32)> = Vec::new();
        for c in &self.classes {
            for m in &c.methods {
                methods.push((tidx(&c.descriptor), sidx(&m.name)));
                for (cls, name, _) in &m.calls {
                    methods.push((tidx(cls), sidx(name)));
                }
            }
        }
        methods.sort();
        methods.dedup();
        let midx = |cls: &str, name: &str| methods.iter().position(|&m| m == (tidx(cls), sidx(name))).unwrap() as u16;

        let n_protos = if self.classes.is_empty() { 0 } else { 1 };
        let string_ids_off = 0x70usize;
        let type_ids_off = string_ids_off + 4 * strings.len();
        let proto_ids_off = type_ids_off + 4 * types.len();
        let method_ids_off = proto_ids_off + 12 * n_protos;
        let class_defs_off = method_ids_off + 8 * methods.len();
        let data_off = class_defs_off + 32 * self.classes.len();

        let mut data: Vec<u8> = Vec::new();
        let mut map_items: Vec<(u16, u32, usize)> = Vec::new();
        // code items
        let mut code_offs: Vec<Vec<usize>> = Vec::new();
        let mut n_code = 0;
        let code_start = data_off;
        for c in &self.classes {
            let mut offs = Vec::new();
            for m in &c.methods {
                align4(&mut data);
                offs.push(data_off + data.len());
                n_code += 1;
                let mut insns: Vec<u16> = Vec::new();
                for s in &m.const_strings {
                    insns.extend([0x001a, sidx(s) as u16]);
                }
                for (cls, name, form) in &m.calls {
                    let id = midx(cls, name);
                    insns.extend(match form {
                        Invoke::Virtual => [0x106e, id, 0x0000],
                        Invoke::VirtualRange => [0x0174, id, 0x0000],
                        Invoke::Static => [0x0071, id, 0x0000],
                        Invoke::Direct => [0x1070, id, 0x0000],
                        Invoke::Interface => [0x1072, id, 0x0000],
                    });
                }
                insns.push(0x000e);
                if m.with_payload {
                    if insns.len() % 2 != 0 {
                        insns.push(0x0000);
                    }
                    insns.extend([0x0100, 1, 0, 0, 3, 0]);
                }
                push_u16(&mut data, 1);
                push_u16(&mut data, 0);
                push_u16(&mut data, 1);
                push_u16(&mut data, 0);
                push_u32(&mut data, 0);
                push_u32(&mut data, insns.len() as u32);
                for u in insns {
                    push_u16(&mut data, u);
                }
            }
            code_offs.push(offs);
        }
        if n_code > 0 {
            map_items.push((0x2001, n_code, code_start));
        }
        // class data
        let class_data_start = data_off + data.len();
        let mut class_data_offs = Vec::new();
        for (c, offs) in self.classes.iter().zip(&code_offs) {
            class_data_offs.push(data_off + data.len());
            let mut ids: Vec<(u16, usize)> = c
                .methods
                .iter()
                .zip(offs)
                .map(|(m, &o)| (midx(&c.descriptor, &m.name), o))
                .collect();
            ids.sort();
            uleb(&mut data, 0);
            uleb(&mut data, 0);
            uleb(&mut data, ids.len() as u32);
            uleb(&mut data, 0);
            let mut prev = 0u32;
            for (id, off) in ids {
                uleb(&mut data, id as u32 - prev);
                prev = id as u32;
                uleb(&mut data, 0x9);
                uleb(&mut data, off as u32);
            }
        }
        if !self.classes.is_empty() {
            map_items.push((0x2000, self.classes.len() as u32, class_data_start));
        }
        // string data
        let string_data_start = data_off + data.len();
        let mut string_offs = Vec::new();
        for s in &strings {
            string_offs.push(data_off + data.len());
            uleb(&mut data, s.encode_utf16().count() as u32);
            data.extend(mutf8(s));
            data.push(0);
        }
        if !strings.is_empty() {
            map_items.push((0x2002, strings.len() as u32, string_data_start));
        }
        align4(&mut data);
        let map_off = data_off + data.len();

        let mut header_items = vec![(0x0000u16, 1u32, 0usize)];
        if !strings.is_empty() {
            header_items.push((0x0001, strings.len() as u32, string_ids_off));
        }
        if !types.is_empty() {
            header_items.push((0x0002, types.len() as u32, type_ids_off));
        }
        if n_protos > 0 {
            header_items.push((0x0003, 1, proto_ids_off));
        }
        if !methods.is_empty() {
            header_items.push((0x0005, methods.len() as u32, method_ids_off));
        }
        if !self.classes.is_empty() {
            header_items.push((0x0006, self.classes.len() as u32, class_defs_off));
        }
        let mut all_items = header_items;
        all_items.extend(map_items);
        all_items.push((0x1000, 1, map_off));
        push_u32(&mut data, all_items.len() as u32);
        for (kind, size, off) in &all_items {
            push_u16(&mut data, *kind);
            push_u16(&mut data, 0);
            push_u32(&mut data, *size);
            push_u32(&mut data, *off as u32);
        }
        let file_size = data_off + data.len();

        let mut out = Vec::with_capacity(file_size);
        out.extend_from_slice(b"dex\n035\0");
        push_u32(&mut out, 0); // checksum, patched below
        out.extend_from_slice(&[0u8; 20]); // signature
        push_u32(&mut out, file_size as u32);
        push_u32(&mut out, 0x70);
        push_u32(&mut out, 0x1234_5678);
        push_u32(&mut out, 0); // link size
        push_u32(&mut out, 0);
        push_u32(&mut out, map_off as u32);
        let table = |out: &mut Vec<u8>, n: usize, off: usize| {
            push_u32(out, n as u32);
            push_u32(out, if n == 0 { 0 } else { off as u32 });
        };
        table(&mut out, strings.len(), string_ids_off);
        table(&mut out, types.len(), type_ids_off);
        table(&mut out, n_protos, proto_ids_off);
        table(&mut out, 0, 0);
        table(&mut out, methods.len(), method_ids_off);
        table(&mut out, self.classes.len(), class_defs_off);
        push_u32(&mut out, (file_size - data_off) as u32);
        push_u32(&mut out, data_off as u32);
        assert_eq!(out.len(), 0x70);

        for off in &string_offs {
            push_u32(&mut out, *off as u32);
        }
        for t in &types {
            push_u32(&mut out, *t);
        }
        if n_protos > 0 {
            push_u32(&mut out, sidx("V"));
            push_u32(&mut out, tidx("V") as u32);
            push_u32(&mut out, 0);
        }
        for (cls, name) in &methods {
            push_u16(&mut out, *cls);
            push_u16(&mut out, 0);
            push_u32(&mut out, *name);
        }
        let object = strings.iter().position(|s| s == "Ljava/lang/Object;");
        for (c, cd) in self.classes.iter().zip(&class_data_offs) {
            push_u32(&mut out, tidx(&c.descriptor) as u32);
            push_u32(&mut out, 0x1);
            match object {
                Some(_) if c.descriptor != "Ljava/lang/Object;" => push_u32(&mut out, tidx("Ljava/lang/Object;") as u32),
                _ => push_u32(&mut out, NO_INDEX),
            }
            push_u32(&mut out, 0);
            push_u32(&mut out, NO_INDEX);
            push_u32(&mut out, 0);
            push_u32(&mut out, *cd as u32);
            push_u32(&mut out, 0);
        }
        assert_eq!(out.len(), data_off);
        out.extend(data);
        let sum = adler32(&out[12..]);
        out[8..12].copy_from_slice(&sum.to_le_bytes());
        out
    }
}

// ------------------------------------------------------------------ PNG, ZIP

pub struct Image {
    pub width: usize,
    pub height: usize,
    /// RGBA, row-major.
    pub rgba: Vec<[u8; 4]>,
}

impl Image {
    pub fn solid(w: usize, h: usize, px: [u8; 4]) -> Self {
        Self { width: w, height: h, rgba: vec![px; w * h] }
    }

    pub fn png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgba);
            enc.set_depth(png::BitDepth::Eight);
            let flat: Vec<u8> = self.rgba.iter().flatten().copied().collect();
            enc.write_header().unwrap().write_image_data(&flat).unwrap();
        }
        out
    }

    /// Reference descriptor computed straight from the pixel array.
    pub fn descriptor(&self) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let rgb: Vec<[f64; 3]> = self
            .rgba
            .iter()
            .map(|p| {
                let a = p[3] as f64 / 255.0;
                [0, 1, 2].map(|c| p[c] as f64 / 255.0 * a + (1.0 - a))
            })
            .collect();
        let mut v = vec![0.0; 112];
        for gy in 0..8 {
            for gx in 0..8 {
                let mut sum = 0.0;
                let mut n = 0;
                for y in 0..h {
                    for x in 0..w {
                        if y * 8 / h == gy && x * 8 / w == gx {
                            let [r, g, b] = rgb[y * w + x];
                            sum += 0.299 * r + 0.587 * g + 0.114 * b;
                            n += 1;
                        }
                    }
                }
                v[gy * 8 + gx] = sum / n as f64;
            }
        }
        for p in &rgb {
            for c in 0..3 {
                let bin = ((p[c] * 16.0).floor() as usize).min(15);
                v[64 + 16 * c + bin] += 1.0 / (w * h) as f64;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / norm).collect()
    }
}

/// Deterministic archive: fixed timestamps, given entry order.
pub fn pack_zip(entries: &[(&str, &[u8], bool)]) -> Vec<u8> {
    let mut w = zip::ZipWriter::new(Cursor::new(Vec::new()));
    for (name, bytes, deflate) in entries {
        let method = if *deflate {
            zip::CompressionMethod::Deflated
        } else {
            zip::CompressionMethod::Stored
        };
        let opts = zip::write::SimpleFileOptions::default()
            .compression_method(method)
            .last_modified_time(zip::DateTime::default())
            .unix_permissions(0o644);
        w.start_file(*name, opts).unwrap();
        w.write_all(bytes).unwrap();
    }
    w.finish().unwrap().into_inner()
}

// ------------------------------------------------------------ golden fixtures

pub struct Fixture {
    pub name: &'static str,
    pub manifest: Vec<u8>,
    pub dex: Vec<Vec<u8>>,
    pub icon: Option<(String, Vec<u8>)>,
    pub apk: Vec<u8>,
    pub expected: Value,
}

fn method(name: &str, calls: &[(&str, &str, Invoke)], consts: &[&str], payload: bool) -> MethodSpec {
    MethodSpec {
        name: name.into(),
        calls: calls.iter().map(|(c, m, f)| (c.to_string(), m.to_string(), *f)).collect(),
        const_strings: consts.iter().map(|s| s.to_string()).collect(),
        with_payload: payload,
    }
}

fn gradient(w: usize, h: usize) -> Image {
    let mut rgba = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let a = if (x + y) % 5 == 0 { 128 } else { 255 };
            rgba.push([(x * 255 / (w - 1)) as u8, (y * 255 / (h - 1)) as u8, ((x * y) % 256) as u8, a]);
        }
    }
    Image { width: w, height: h, rgba }
}

const LOCATION_MANAGER: &str = "Landroid/location/LocationManager;";

pub fn fixtures() -> Vec<Fixture> {
    let mut out = Vec::new();

    // TinyCalc: UTF-16 pool, literal label, white icon, no sensitive API.
    {
        let manifest = ManifestSpec {
            package: "com.example.tinycalc".into(),
            label: Label::Literal("TinyCalc".into()),
            icon_ref: Some(0x7f0d_0000),
            permissions: vec!["android.permission.ACCESS_FINE_LOCATION".into()],
            activities: vec![".MainActivity".into()],
            utf8: false,
        };
        let dex = DexSpec {
            classes: vec![
                ClassSpec {
                    descriptor: "Lcom/example/tinycalc/MainActivity;".into(),
                    methods: vec![method(
                        "compute",
                        &[
                            ("Lcom/example/tinycalc/Calc;", "plus", Invoke::Static),
                            ("Lcom/example/tinycalc/Calc;", "minus", Invoke::Static),
                        ],
                        &["calc", "résumé ≈ 3.14"],
                        true,
                    )],
                },
                ClassSpec {
                    descriptor: "Lcom/example/tinycalc/Calc;".into(),
                    methods: vec![method("plus", &[], &[], false), method("minus", &[], &[], false)],
                },
            ],
            extra_strings: vec![],
        };
        let icon = Image::solid(64, 64, [255, 255, 255, 255]);
        out.push(assemble(
            "tinycalc",
            &manifest,
            vec![dex],
            Some(("res/mipmap-hdpi-v4/ic_launcher.png", icon)),
            None,
            json!({}),
            json!([]),
            None,
        ));
    }

    // Locator: UTF-8 pool, two call sites of getLastKnownLocation, ad library.
    {
        let manifest = ManifestSpec {
            package: "com.example.locator".into(),
            label: Label::Literal("Locator".into()),
            icon_ref: Some(0x7f0d_0001),
            permissions: vec![
                "android.permission.ACCESS_FINE_LOCATION".into(),
                "android.permission.INTERNET".into(),
                "LOCATOR_SYNC".into(),
            ],
            activities: vec!["com.example.locator.Main".into(), ".Settings".into()],
            utf8: true,
        };
        let dex = DexSpec {
            classes: vec![
                ClassSpec {
                    descriptor: "Lcom/example/locator/Main;".into(),
                    methods: vec![
                        method(
                            "onCreate",
                            &[
                                (LOCATION_MANAGER, "getLastKnownLocation", Invoke::Virtual),
                                ("Lcom/google/ads/AdView;", "loadAd", Invoke::Virtual),
                            ],
                            &["gps"],
                            false,
                        ),
                        method(
                            "refresh",
                            &[
                                (LOCATION_MANAGER, "getLastKnownLocation", Invoke::VirtualRange),
                                ("Ljava/net/URL;", "openConnection", Invoke::Virtual),
                                ("Landroid/util/Log;", "d", Invoke::Static),
                            ],
                            &["https://example.com/where"],
                            true,
                        ),
                    ],
                },
                ClassSpec {
                    descriptor: "Lcom/google/ads/AdView;".into(),
                    methods: vec![method("loadAd", &[], &[], false)],
                },
            ],
            extra_strings: vec![],
        };
        let icon = gradient(20, 12);
        let low = Image::solid(4, 4, [0, 0, 0, 255]);
        out.push(assemble(
            "locator",
            &manifest,
            vec![dex],
            Some(("res/mipmap-xxhdpi-v4/ic_launcher.png", icon)),
            Some(("res/mipmap-mdpi-v4/ic_launcher.png", low)),
            json!({
                "android.location.LocationManager.getLastKnownLocation": 2,
                "java.net.URL.openConnection": 1
            }),
            json!(["com.google.ads"]),
            None,
        ));
    }

    // Two bare string pools, overlapping; label by resource reference, no icon.
    {
        let manifest = ManifestSpec {
            package: "org.sample.pool".into(),
            label: Label::Ref(0x7f0f_0001),
            icon_ref: None,
            permissions: vec![],
            activities: vec![],
            utf8: true,
        };
        let d1 = DexSpec {
            classes: vec![],
            extra_strings: vec!["calc".into(), "plus".into(), "minus".into()],
        };
        let d2 = DexSpec {
            classes: vec![],
            extra_strings: vec!["minus".into(), "times".into()],
        };
        out.push(assemble("pool", &manifest, vec![d1, d2], None, None, json!({}), json!([]), Some("pool")));
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    name: &'static str,
    manifest: &ManifestSpec,
    dex: Vec<DexSpec>,
    icon: Option<(&str, Image)>,
    decoy: Option<(&str, Image)>,
    apis: Value,
    libraries: Value,
    fallback_name: Option<&str>,
) -> Fixture {
    let axml = build_axml(manifest);
    let dex_bytes: Vec<Vec<u8>> = dex.iter().map(DexSpec::build).collect();
    let icon_png = icon.as_ref().map(|(p, img)| (p.to_string(), img.png()));
    let decoy_png = decoy.as_ref().map(|(p, img)| (p.to_string(), img.png()));

    let dex_names: Vec<String> = (0..dex_bytes.len())
        .map(|i| if i == 0 { "classes.dex".to_string() } else { format!("classes{}.dex", i + 1) })
        .collect();
    let mut entries: Vec<(&str, &[u8], bool)> = vec![("AndroidManifest.xml", &axml, true)];
    for (n, b) in dex_names.iter().zip(&dex_bytes) {
        entries.push((n, b, false));
    }
    if let Some((p, b)) = &decoy_png {
        entries.push((p, b, false));
    }
    if let Some((p, b)) = &icon_png {
        entries.push((p, b, false));
    }
    let apk = pack_zip(&entries);

    let mut strings = BTreeSet::new();
    for d in &dex {
        strings.extend(d.pool());
    }
    let permissions: BTreeSet<String> = manifest
        .permissions
        .iter()
        .map(|p| if p.contains('.') { p.clone() } else { format!("{}.{p}", manifest.package) })
        .collect();
    let app_name = match &manifest.label {
        Label::Literal(s) => s.clone(),
        Label::Ref(_) => fallback_name.unwrap().to_string(),
    };
    let components: Vec<String> = manifest
        .activities
        .iter()
        .map(|a| if a.starts_with('.') { format!("{}{a}", manifest.package) } else { a.clone() })
        .collect();
    let icon_vec = icon.as_ref().map_or(vec![0.0; 112], |(_, img)| img.descriptor());
    let label = match &manifest.label {
        Label::Literal(s) => json!({"kind": "literal", "value": s}),
        Label::Ref(id) => json!({"kind": "resource_ref", "value": id}),
    };
    let expected = json!({
        "app_name": app_name,
        "label": label,
        "package": manifest.package,
        "permissions": permissions,
        "components": components,
        "strings": strings,
        "restricted_apis": apis,
        "libraries": libraries,
        "icon_descriptor": icon_vec,
        "icon_entry": icon.as_ref().map(|(p, _)| p.to_string()),
    });
    Fixture {
        name,
        manifest: axml,
        dex: dex_bytes,
        icon: icon_png,
        apk,
        expected,
    }
}

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Directory of the committed fixtures, from any crate in the workspace.
pub fn apk_fixture_dir() -> PathBuf {
    let here = Path::new(env!("CARGO_MANIFEST_DIR"));
    let own = here.join("tests/fixtures");
    if own.join("tinycalc.apk").exists() {
        own
    } else {
        here.join("../apk/tests/fixtures")
    }
}

pub fn load_expected(name: &str) -> Value {
    let text = std::fs::read_to_string(apk_fixture_dir().join(format!("{name}.expected.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn string_set(v: &Value) -> BTreeSet<String> {
    v.as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect()
}

pub fn count_map(v: &Value) -> BTreeMap<String, u32> {
    v.as_object()
        .unwrap()
        .iter()
        .map(|(k, n)| (k.clone(), n.as_u64().unwrap() as u32))
        .collect()
}

// ------------------------------------------------------------- mutation fuzz

#[derive(Debug, Default)]
pub struct FuzzStats {
    pub iterations: usize,
    pub ok: usize,
    pub errors: usize,
    /// Iteration numbers whose parser panicked or broke an output invariant.
    pub failures: Vec<(usize, String)>,
}

fn mutate(rng: &mut rand_chacha::ChaCha8Rng, bytes: &mut Vec<u8>) {
    use rand::Rng;
    let edits = rng.gen_range(1..=6);
    for _ in 0..edits {
        if bytes.is_empty() {
            bytes.push(rng.gen());
            continue;
        }
        let at = rng.gen_range(0..bytes.len());
        match rng.gen_range(0..7) {
            0 => bytes[at] ^= 1 << rng.gen_range(0..8),
            1 => bytes[at] = rng.gen(),
            2 => bytes[at] = [0x00, 0xff, 0x7f, 0x80][rng.gen_range(0..4)],
            3 => bytes.truncate(at),
            4 => {
                let n = rng.gen_range(1..=8).min(bytes.len() - at);
                let chunk: Vec<u8> = bytes[at..at + n].to_vec();
                let to = rng.gen_range(0..=bytes.len());
                bytes.splice(to..to, chunk);
            }
            5 => {
                let n = rng.gen_range(1..=4).min(bytes.len() - at);
                bytes.drain(at..at + n);
            }
            _ => {
                // Overwrite a 32-bit word with a boundary value.
                let v: u32 = [0, 1, 0x7fff_ffff, 0xffff_ffff, 0x8000, bytes.len() as u32][rng.gen_range(0..6)];
                for (k, b) in v.to_le_bytes().iter().enumerate() {
                    if let Some(slot) = bytes.get_mut(at + k) {
                        *slot = *b;
                    }
                }
            }
        }
    }
}

fn check_features(f: &appcat_apk::ApkFeatures, map: &appcat_apk::PermissionApiMap) -> Result<(), String> {
    if f.icon_descriptor.len() != 112 {
        return Err("icon descriptor length".into());
    }
    let norm = f.icon_descriptor.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm == 0.0 || (norm - 1.0).abs() < 1e-9) {
        return Err(format!("icon norm {norm}"));
    }
    if let Some(k) = f.restricted_apis.keys().find(|k| !map.contains(k)) {
        return Err(format!("unmapped api {k}"));
    }
    if f.strings.iter().any(|s| s.contains('\0')) {
        return Err("string with NUL".into());
    }
    Ok(())
}

/// Mutates fixture bytes `iterations` times and runs the parsers on each
/// result. Targets rotate between the whole archive, the manifest, a DEX
/// file and the icon; inner targets are repacked into a fresh archive.
pub fn fuzz_fixtures(fixtures: &[Fixture], iterations: usize, seed: u64) -> FuzzStats {
    use rand::{Rng, SeedableRng};
    let map = appcat_apk::PermissionApiMap::bundled();
    let prefixes = appcat_apk::bundled_prefixes();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut stats = FuzzStats::default();
    let prev_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    for it in 0..iterations {
        stats.iterations += 1;
        let fx = &fixtures[rng.gen_range(0..fixtures.len())];
        let target = rng.gen_range(0..4);
        let mut manifest = fx.manifest.clone();
        let mut dex = fx.dex.clone();
        let mut icon = fx.icon.clone();
        let mut whole = None;
        match target {
            0 => {
                let mut b = fx.apk.clone();
                mutate(&mut rng, &mut b);
                whole = Some(b);
            }
            1 => mutate(&mut rng, &mut manifest),
            2 => {
                let k = rng.gen_range(0..dex.len());
                mutate(&mut rng, &mut dex[k]);
            }
            _ => match icon.as_mut() {
                Some((_, b)) => mutate(&mut rng, b),
                None => mutate(&mut rng, &mut manifest),
            },
        }
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| -> Result<bool, String> {
            let mut ok = true;
            if target == 1 {
                ok &= appcat_apk::parse_axml(&manifest).is_ok();
            }
            if target == 2 {
                for d in &dex {
                    match appcat_apk::DexFile::parse(d) {
                        Ok(f) => ok &= f.invoke_counts().is_ok(),
                        Err(_) => ok = false,
                    }
                }
            }
            let bytes = whole.clone().unwrap_or_else(|| {
                let names: Vec<String> = (0..dex.len())
                    .map(|i| if i == 0 { "classes.dex".into() } else { format!("classes{}.dex", i + 1) })
                    .collect();
                let mut entries: Vec<(&str, &[u8], bool)> = vec![("AndroidManifest.xml", &manifest, false)];
                for (n, b) in names.iter().zip(&dex) {
                    entries.push((n, b, false));
                }
                if let Some((p, b)) = &icon {
                    entries.push((p, b, false));
                }
                pack_zip(&entries)
            });
            match appcat_apk::Apk::from_bytes(bytes) {
                Err(_) => Ok(false),
                Ok(mut apk) => {
                    let f = appcat_apk::extract_from(&mut apk, &map, &prefixes, None);
                    check_features(&f, &map)?;
                    Ok(ok && f.diagnostics.is_empty())
                }
            }
        }));
        match outcome {
            Ok(Ok(true)) => stats.ok += 1,
            Ok(Ok(false)) => stats.errors += 1,
            Ok(Err(msg)) => stats.failures.push((it, msg)),
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                stats.failures.push((it, format!("panic: {msg}")));
            }
        }
    }
    std::panic::set_hook(prev_hook);
    stats
}
