//! On-disk paired dataset: `manifest.json`, `rgb/<id>.png`, `ir/<id>.png`
//! and `labels/<id>.txt` under one root.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rgbir_core::dataset::{check_unique_ids, Illumination, ImagePair, Source};
use rgbir_core::{BoundingBox, ClassId, Detection, Image, Modality};
use serde::{Deserialize, Serialize};

use crate::error::{fs_err, IoError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const MICRO: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub illumination: Illumination,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
}

impl ManifestEntry {
    pub fn rgb_path(&self) -> String {
        self.rgb.clone().unwrap_or_else(|| format!("rgb/{}.png", self.id))
    }

    pub fn ir_path(&self) -> String {
        self.ir.clone().unwrap_or_else(|| format!("ir/{}.png", self.id))
    }

    pub fn labels_path(&self) -> String {
        self.labels.clone().unwrap_or_else(|| format!("labels/{}.txt", self.id))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

pub fn read_png(path: &Path) -> Result<Image> {
    let png_err = |e: png::DecodingError| IoError::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let file = File::open(path).map_err(fs_err(path))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader.output_buffer_size().ok_or_else(|| IoError::Png {
        path: path.to_path_buf(),
        message: "image too large".into(),
    })?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(info.buffer_size());
    let channels = info.color_type.samples();
    let (w, h) = (info.width as usize, info.height as usize);
    let data = if info.line_size == w * channels {
        buf
    } else {
        buf.chunks(info.line_size)
            .flat_map(|row| row[..w * channels].iter().copied())
            .collect()
    };
    Ok(Image::from_raw(w, h, channels, data)?)
}

pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    let color = match image.channels() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        c => {
            return Err(IoError::Png {
                path: path.to_path_buf(),
                message: format!("cannot encode {c}-channel image"),
            })
        }
    };
    let png_err = |e: png::EncodingError| IoError::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let file = File::create(path).map_err(fs_err(path))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), image.width() as u32, image.height() as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(png_err)?;
    writer.write_image_data(image.data()).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

fn read_image(path: &Path, channels: usize, id: &str) -> Result<Image> {
    let img = read_png(path)?;
    if img.channels() == channels {
        return Ok(img);
    }
    if channels == 3 && img.channels() == 4 {
        let data = img.data().chunks(4).flat_map(|p| p[..3].iter().copied()).collect();
        return Ok(Image::from_raw(img.width(), img.height(), 3, data)?);
    }
    Err(IoError::Png {
        path: path.to_path_buf(),
        message: format!("`{id}` expects a {channels}-channel image, file has {}", img.channels()),
    })
}

/// Rounds a box to the 6-decimal text grid, shrinking it by at most one grid
/// step where rounding would push an edge outside the image.
pub fn quantize_box(b: &BoundingBox) -> BoundingBox {
    let q = |v: f64| (v * MICRO).round() as i64;
    let fit = |c: i64, s: i64| -> (i64, i64) {
        let c = c.clamp(1, MICRO as i64 - 1);
        let s = s.clamp(1, MICRO as i64).min(2 * c).min(2 * (MICRO as i64 - c));
        (c, s)
    };
    let (cx, w) = fit(q(b.cx), q(b.w));
    let (cy, h) = fit(q(b.cy), q(b.h));
    BoundingBox {
        class: b.class,
        cx: cx as f64 / MICRO,
        cy: cy as f64 / MICRO,
        w: w as f64 / MICRO,
        h: h as f64 / MICRO,
    }
}

pub fn format_box(b: &BoundingBox) -> String {
    let b = quantize_box(b);
    format!("{} {:.6} {:.6} {:.6} {:.6}", b.class.index(), b.cx, b.cy, b.w, b.h)
}

pub fn format_labels(labels: &[BoundingBox]) -> String {
    labels.iter().map(|b| format_box(b) + "\n").collect()
}

fn parse_class(token: &str) -> std::result::Result<ClassId, String> {
    token
        .parse::<usize>()
        .ok()
        .and_then(ClassId::from_index)
        .ok_or_else(|| format!("unknown class id `{token}`"))
}

fn parse_fields(fields: &[&str]) -> std::result::Result<Vec<f64>, String> {
    fields
        .iter()
        .map(|f| f.parse::<f64>().map_err(|_| format!("`{f}` is not a number")))
        .collect()
}

fn parse_lines<T>(text: &str, path: &Path, mut parse: impl FnMut(&[&str]) -> std::result::Result<T, String>) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        out.push(parse(&tokens).map_err(|message| IoError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?);
    }
    Ok(out)
}

/// Parses `class cx cy w h` lines. `path` is only used in error messages.
pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<BoundingBox>> {
    parse_lines(text, path, |t| {
        if t.len() != 5 {
            return Err(format!("expected `class cx cy w h`, got {} fields", t.len()));
        }
        let class = parse_class(t[0])?;
        let v = parse_fields(&t[1..])?;
        BoundingBox::new(class, v[0], v[1], v[2], v[3]).map_err(|e| e.to_string())
    })
}

/// Detection exchange format: one `class conf cx cy w h` line per box.
pub fn format_detections(dets: &[Detection]) -> String {
    dets.iter()
        .map(|d| {
            let b = quantize_box(&d.bbox);
            format!(
                "{} {:.6} {:.6} {:.6} {:.6} {:.6}\n",
                b.class.index(),
                d.confidence,
                b.cx,
                b.cy,
                b.w,
                b.h
            )
        })
        .collect()
}

pub fn parse_detections(text: &str, path: &Path, modality: Modality) -> Result<Vec<Detection>> {
    parse_lines(text, path, |t| {
        if t.len() != 6 {
            return Err(format!("expected `class conf cx cy w h`, got {} fields", t.len()));
        }
        let class = parse_class(t[0])?;
        let v = parse_fields(&t[1..])?;
        if !(0.0..=1.0).contains(&v[0]) {
            return Err(format!("confidence {} outside [0, 1]", v[0]));
        }
        let b = BoundingBox::new(class, v[1], v[2], v[3], v[4]).map_err(|e| e.to_string())?;
        Ok(Detection::new(b, v[0], modality))
    })
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(fs_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(fs_err(dir))?;
    }
    fs::write(path, text).map_err(fs_err(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(fs_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    read_json(&root.join(MANIFEST_FILE))
}

/// Loads every pair listed in `root/manifest.json`.
pub fn load_dataset(root: &Path) -> Result<Vec<ImagePair>> {
    let manifest = read_manifest(root)?;
    let mut pairs = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let rgb = read_image(&root.join(e.rgb_path()), 3, &e.id)?;
        let ir = read_image(&root.join(e.ir_path()), 1, &e.id)?;
        let labels_path = root.join(e.labels_path());
        let labels = parse_labels(&read_text(&labels_path)?, &labels_path)?;
        let pair = ImagePair {
            id: e.id.clone(),
            rgb,
            ir,
            illumination: e.illumination,
            source: e.source,
            labels,
        };
        pair.validate()?;
        pairs.push(pair);
    }
    check_unique_ids(&pairs)?;
    Ok(pairs)
}

/// Writes `pairs` under `root` and returns the manifest that was written.
pub fn write_dataset(pairs: &[ImagePair], root: &Path, seed: u64) -> Result<DatasetManifest> {
    check_unique_ids(pairs)?;
    for dir in ["rgb", "ir", "labels"] {
        let d = root.join(dir);
        fs::create_dir_all(&d).map_err(fs_err(&d))?;
    }
    let mut manifest = DatasetManifest {
        seed,
        entries: Vec::with_capacity(pairs.len()),
    };
    for p in pairs {
        p.validate()?;
        let entry = ManifestEntry {
            id: p.id.clone(),
            illumination: p.illumination,
            source: p.source,
            rgb: None,
            ir: None,
            labels: None,
        };
        write_png(&root.join(entry.rgb_path()), &p.rgb)?;
        write_png(&root.join(entry.ir_path()), &p.ir)?;
        write_text(&root.join(entry.labels_path()), &format_labels(&p.labels))?;
        manifest.entries.push(entry);
    }
    write_json(&root.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Per-image detection files `dir/<id>.txt`.
pub fn write_detection_dir<'a>(dir: &Path, outputs: impl IntoIterator<Item = (&'a String, &'a Vec<Detection>)>) -> Result<()> {
    fs::create_dir_all(dir).map_err(fs_err(dir))?;
    for (id, dets) in outputs {
        write_text(&dir.join(format!("{id}.txt")), &format_detections(dets))?;
    }
    Ok(())
}

/// Detections for `id` from `dir/<id>.txt`; a missing file is an error.
pub fn read_detection_file(dir: &Path, id: &str, modality: Modality) -> Result<Vec<Detection>> {
    let path: PathBuf = dir.join(format!("{id}.txt"));
    parse_detections(&read_text(&path)?, &path, modality)
}
