//! On-disk dataset layout.
//!
//! A dataset directory holds 8-bit grayscale images (PNG or PGM), one
//! annotation file `<stem>.txt` per image with one `x,y` line per landmark,
//! an optional second-annotator file `<stem>.b.txt`, and a `manifest.txt`:
//!
//! ```text
//! pixel_spacing_mm = 0.1
//! train 001.png
//! test1 002.png
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::heatmap::{LandmarkSet, Point, DEFAULT_PIXEL_SPACING_MM};
use crate::metrics::average_annotators;
use crate::pipeline::Sample;
use crate::raster::Raster;
use crate::NUM_LANDMARKS;

pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test1,
    Test2,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Test1, Split::Test2];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test1 => "test1",
            Split::Test2 => "test2",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown split '{s}' (expected train, test1 or test2)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub split: Split,
    pub image: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub pixel_spacing_mm: f64,
    pub entries: Vec<ManifestEntry>,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut spacing = None;
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((key, value)) = line.split_once('=') {
                if key.trim() != "pixel_spacing_mm" {
                    return Err(parse_error(path, i + 1, format!("unknown key '{}'", key.trim())));
                }
                let v: f64 = value
                    .trim()
                    .parse()
                    .map_err(|_| parse_error(path, i + 1, format!("bad pixel spacing '{}'", value.trim())))?;
                if !(v.is_finite() && v > 0.0) {
                    return Err(parse_error(path, i + 1, format!("pixel spacing must be positive, got {v}")));
                }
                spacing = Some(v);
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(split), Some(image), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(parse_error(path, i + 1, "expected '<split> <image file>'"));
            };
            let split = split.parse().map_err(|e: Error| parse_error(path, i + 1, e.to_string()))?;
            entries.push(ManifestEntry {
                split,
                image: image.to_string(),
            });
        }
        Ok(Self {
            pixel_spacing_mm: spacing.unwrap_or(DEFAULT_PIXEL_SPACING_MM),
            entries,
        })
    }

    pub fn render(&self) -> String {
        let mut out = format!("pixel_spacing_mm = {}\n", self.pixel_spacing_mm);
        for e in &self.entries {
            out.push_str(&format!("{} {}\n", e.split, e.image));
        }
        out
    }
}

/// Parses an annotation file of `NUM_LANDMARKS` `x,y` lines.
pub fn read_annotation(path: &Path) -> Result<Vec<Point>> {
    let text = read_text(path)?;
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    if lines.len() != NUM_LANDMARKS {
        return Err(parse_error(
            path,
            lines.last().map_or(0, |l| l.0),
            format!("expected {NUM_LANDMARKS} landmark lines, found {}", lines.len()),
        ));
    }
    lines
        .into_iter()
        .map(|(n, l)| {
            let (x, y) = l
                .split_once(',')
                .ok_or_else(|| parse_error(path, n, format!("expected 'x,y', got '{l}'")))?;
            let coord = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_error(path, n, format!("bad coordinate '{}'", s.trim())))
            };
            Ok(Point::new(coord(x)?, coord(y)?))
        })
        .collect()
}

pub fn write_annotation(path: &Path, landmarks: &LandmarkSet) -> Result<()> {
    let text: String = landmarks
        .points()
        .iter()
        .map(|p| format!("{},{}\n", p.x, p.y))
        .collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads an 8-bit grayscale image scaled to `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Raster> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect();
    Raster::new(w as usize, h as usize, data)
}

/// Writes an image as 8-bit grayscale, quantising `[0, 1]` to `0..=255`.
/// The format follows the extension.
pub fn write_image(path: &Path, raster: &Raster) -> Result<()> {
    let bytes: Vec<u8> = raster.data().iter().map(|&v| quantize(v)).collect();
    let img = image::GrayImage::from_raw(raster.width() as u32, raster.height() as u32, bytes)
        .expect("buffer length matches dimensions");
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn stem_of(image: &str) -> &str {
    Path::new(image)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(image)
}

/// Loads one split (or every split with `None`), ordered by id.
pub fn load_dataset(dir: &Path, split: Option<Split>) -> Result<Vec<Sample>> {
    let manifest = Manifest::read(&dir.join(MANIFEST))?;
    let mut samples = Vec::new();
    for entry in manifest.entries.iter().filter(|e| split.is_none_or(|s| s == e.split)) {
        let stem = stem_of(&entry.image);
        let image = read_image(&dir.join(&entry.image))?;
        let primary = read_annotation(&dir.join(format!("{stem}.txt")))?;
        let mut landmarks = LandmarkSet::new(primary, manifest.pixel_spacing_mm)?;
        let second: PathBuf = dir.join(format!("{stem}.b.txt"));
        if second.exists() {
            let b = LandmarkSet::new(read_annotation(&second)?, manifest.pixel_spacing_mm)?;
            landmarks = average_annotators(&landmarks, &b)?;
        }
        samples.push(Sample {
            id: stem.to_string(),
            image,
            landmarks,
        });
    }
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(samples)
}

/// Writes samples as PNG plus annotations and a manifest. All samples must
/// share one pixel spacing.
pub fn save_dataset(dir: &Path, samples: &[(Split, Sample)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let spacing = samples
        .first()
        .map_or(DEFAULT_PIXEL_SPACING_MM, |(_, s)| s.landmarks.pixel_spacing_mm());
    if let Some((_, s)) = samples.iter().find(|(_, s)| s.landmarks.pixel_spacing_mm() != spacing) {
        return Err(Error::InvalidArgument(format!(
            "sample {} has pixel spacing {}, expected {spacing}",
            s.id,
            s.landmarks.pixel_spacing_mm()
        )));
    }
    let mut manifest = Manifest {
        pixel_spacing_mm: spacing,
        entries: Vec::with_capacity(samples.len()),
    };
    for (split, s) in samples {
        let file = format!("{}.png", s.id);
        write_image(&dir.join(&file), &s.image)?;
        write_annotation(&dir.join(format!("{}.txt", s.id)), &s.landmarks)?;
        manifest.entries.push(ManifestEntry {
            split: *split,
            image: file,
        });
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest.render()).map_err(|e| Error::io(&path, e))
}
