//! Launcher icon descriptor: an 8x8 grayscale thumbnail followed by 16-bin
//! red, green and blue histograms, L2-normalized (112 values).

use std::io::Cursor;

use crate::axml::AttrValue;

pub const ICON_DIM: usize = 112;
const GRID: usize = 8;
const BINS: usize = 16;
const MAX_SIDE: u32 = 4096;

const DENSITIES: [&str; 7] = ["xxxhdpi", "xxhdpi", "xhdpi", "hdpi", "mdpi", "ldpi", "anydpi"];

#[derive(Debug, Clone, PartialEq)]
pub struct IconDescriptor {
    pub values: Vec<f64>,
    /// Set when the vector is zero for lack of a decodable icon.
    pub warning: Option<String>,
}

impl IconDescriptor {
    pub fn zero(warning: impl Into<String>) -> Self {
        Self {
            values: vec![0.0; ICON_DIM],
            warning: Some(warning.into()),
        }
    }
}

/// Chooses the launcher icon entry among `names`. A literal `android:icon`
/// path wins; otherwise the densest `ic_launcher.png` under `res/mipmap*`
/// or `res/drawable*`.
pub fn locate_icon<'a>(names: &'a [String], icon_attr: &AttrValue) -> Option<&'a str> {
    if let AttrValue::Literal(path) = icon_attr {
        if let Some(n) = names.iter().find(|n| *n == path) {
            return Some(n);
        }
    }
    let rank = |name: &str| -> Option<(usize, usize, usize)> {
        let (dir, file) = name.strip_prefix("res/")?.split_once('/')?;
        let kind = if dir.starts_with("mipmap") {
            0
        } else if dir.starts_with("drawable") {
            1
        } else {
            return None;
        };
        let stem = file.strip_suffix(".png")?;
        let round = match stem {
            "ic_launcher" => 0,
            "ic_launcher_round" => 1,
            _ => return None,
        };
        let density = DENSITIES
            .iter()
            .position(|d| dir.split('-').any(|q| q == *d))
            .unwrap_or(DENSITIES.len());
        Some((round, density, kind))
    };
    names
        .iter()
        .filter_map(|n| rank(n).map(|r| (r, n)))
        .min()
        .map(|(_, n)| n.as_str())
}

/// RGB pixels with alpha composited over white.
fn decode_rgb(bytes: &[u8]) -> Result<(usize, usize, Vec<[f64; 3]>), String> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let (w, h) = {
        let info = reader.info();
        (info.width, info.height)
    };
    if w == 0 || h == 0 || w > MAX_SIDE || h > MAX_SIDE {
        return Err(format!("unsupported icon size {w}x{h}"));
    }
    let size = reader.output_buffer_size().ok_or("icon too large")?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let channels = match frame.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err("palette not expanded".into()),
    };
    let (w, h) = (frame.width as usize, frame.height as usize);
    let mut px = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = &buf[y * frame.line_size..y * frame.line_size + w * channels];
        for p in row.chunks_exact(channels) {
            let f = |v: u8| v as f64 / 255.0;
            let (rgb, a) = match channels {
                1 => ([f(p[0]); 3], 1.0),
                2 => ([f(p[0]); 3], f(p[1])),
                3 => ([f(p[0]), f(p[1]), f(p[2])], 1.0),
                _ => ([f(p[0]), f(p[1]), f(p[2])], f(p[3])),
            };
            px.push(rgb.map(|c| c * a + (1.0 - a)));
        }
    }
    Ok((w, h, px))
}

/// Descriptor from PNG bytes.
pub fn describe_png(bytes: &[u8]) -> Result<Vec<f64>, String> {
    let (w, h, px) = decode_rgb(bytes)?;
    let mut grid = [0f64; GRID * GRID];
    let mut hits = [0usize; GRID * GRID];
    let mut hist = [0f64; 3 * BINS];
    for y in 0..h {
        for x in 0..w {
            let [r, g, b] = px[y * w + x];
            let cell = (y * GRID / h) * GRID + x * GRID / w;
            grid[cell] += 0.299 * r + 0.587 * g + 0.114 * b;
            hits[cell] += 1;
            for (c, v) in [r, g, b].into_iter().enumerate() {
                let bin = ((v * BINS as f64) as usize).min(BINS - 1);
                hist[c * BINS + bin] += 1.0;
            }
        }
    }
    // Images smaller than the grid leave cells empty; sample the nearest pixel.
    for gy in 0..GRID {
        for gx in 0..GRID {
            let cell = gy * GRID + gx;
            if hits[cell] == 0 {
                let [r, g, b] = px[(gy * h / GRID) * w + gx * w / GRID];
                grid[cell] = 0.299 * r + 0.587 * g + 0.114 * b;
            } else {
                grid[cell] /= hits[cell] as f64;
            }
        }
    }
    let n = (w * h) as f64;
    let mut v: Vec<f64> = grid.iter().copied().chain(hist.iter().map(|c| c / n)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err("icon descriptor is all zero".into());
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}
