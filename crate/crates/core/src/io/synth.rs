//! Synthetic skull-proxy cephalograms with exactly known landmarks.
//!
//! Each scene places a canonical 19-point lateral-skull template under a
//! random similarity transform with small per-landmark jitter, then draws a
//! cranial vault arc, a mandible polyline and a soft-tissue profile through
//! the relevant landmarks as soft (Gaussian-profile) strokes. Every landmark
//! carries a bright Gaussian marker that is the local intensity maximum.
//! Images are quantised to 8 bits so a save/load cycle is lossless.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{quantize, save_dataset, Split};
use crate::error::{Error, Result};
use crate::heatmap::{LandmarkSet, Point, DEFAULT_PIXEL_SPACING_MM};
use crate::pipeline::Sample;
use crate::raster::Raster;

/// Landmark template in unit coordinates (x right, y down, face to the right).
pub const TEMPLATE: [(f64, f64); 19] = [
    (0.38, 0.35), // sella
    (0.78, 0.30), // nasion
    (0.68, 0.40), // orbitale
    (0.22, 0.42), // porion
    (0.76, 0.58), // subspinale
    (0.72, 0.76), // supramentale
    (0.74, 0.84), // pogonion
    (0.61, 0.94), // menton
    (0.69, 0.91), // gnathion
    (0.36, 0.82), // gonion
    (0.80, 0.67), // lower incisal incision
    (0.87, 0.63), // upper incisal incision
    (0.93, 0.57), // upper lip
    (0.92, 0.72), // lower lip
    (0.90, 0.49), // subnasale
    (0.85, 0.86), // soft tissue pogonion
    (0.46, 0.54), // posterior nasal spine
    (0.80, 0.50), // anterior nasal spine
    (0.30, 0.55), // articulare
];

/// Landmarks (1-based) joined by the mandible stroke.
const MANDIBLE: [usize; 6] = [19, 10, 8, 9, 7, 6];
/// Landmarks (1-based) joined by the soft-tissue profile stroke.
const PROFILE: [usize; 5] = [15, 13, 14, 16, 9];

const BACKGROUND: f64 = 0.08;
const STROKE: f64 = 0.28;
const VAULT: f64 = 0.25;
const MARKER: f64 = 0.6;
const NOISE_STD: f64 = 0.01;

/// Minimum distance between any two landmarks, in pixels.
pub fn min_separation(size: usize) -> f64 {
    (size as f64 * 0.05).max(3.0)
}

fn min_distance(points: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.min(a.distance(*b));
        }
    }
    best
}

fn place_landmarks(size: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let s = size as f64;
    let margin = 2.0_f64.max(s * 0.03);
    let jitter = Normal::new(0.0, 0.006 * s).expect("positive std");
    loop {
        let scale = rng.random_range(0.80..0.92) * s;
        let theta = rng.random_range(-6.0_f64..6.0).to_radians();
        let (sin, cos) = theta.sin_cos();
        let cx = s / 2.0 + rng.random_range(-0.03..0.03) * s;
        let cy = s / 2.0 + rng.random_range(-0.03..0.03) * s;
        let pts: Vec<Point> = TEMPLATE
            .iter()
            .map(|&(u, v)| {
                let (dx, dy) = ((u - 0.5) * scale, (v - 0.5) * scale);
                Point::new(
                    cx + cos * dx - sin * dy + jitter.sample(rng),
                    cy + sin * dx + cos * dy + jitter.sample(rng),
                )
            })
            .collect();
        let inside = pts
            .iter()
            .all(|p| p.x >= margin && p.y >= margin && p.x <= s - 1.0 - margin && p.y <= s - 1.0 - margin);
        if inside && min_distance(&pts) >= min_separation(size) {
            return pts;
        }
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.x * ab.x + ab.y * ab.y;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2).clamp(0.0, 1.0)
    };
    p.distance(Point::new(a.x + t * ab.x, a.y + t * ab.y))
}

fn polyline_distance(p: Point, line: &[Point]) -> f64 {
    line.windows(2)
        .map(|w| segment_distance(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

/// Renders one scene; intensities are quantised to multiples of 1/255.
pub fn render_scene(size: usize, landmarks: &[Point], rng: &mut ChaCha8Rng) -> Raster {
    let s = size as f64;
    let stroke_w = (s * 0.012).max(0.7);
    let marker_w = (s * 0.015).max(0.9);
    let lm = |n: usize| landmarks[n - 1];
    let mandible: Vec<Point> = MANDIBLE.iter().map(|&n| lm(n)).collect();
    let profile: Vec<Point> = PROFILE.iter().map(|&n| lm(n)).collect();
    // Cranial vault: upper arc of an ellipse anchored between porion and nasion.
    let (po, na) = (lm(4), lm(2));
    let centre = Point::new((po.x + na.x) / 2.0, (po.y + na.y) / 2.0 + 0.05 * s);
    let (rx, ry) = (po.distance(na) * 0.55, 0.36 * s);
    let vault: Vec<Point> = (0..=48)
        .map(|i| {
            let a = PI * (1.1 + 0.8 * i as f64 / 48.0);
            Point::new(centre.x + rx * a.cos(), centre.y + ry * a.sin())
        })
        .collect();
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    let gauss = |d: f64, w: f64| (-d * d / (2.0 * w * w)).exp();
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let p = Point::new(x as f64, y as f64);
            let mut v = BACKGROUND;
            v += STROKE * gauss(polyline_distance(p, &mandible), stroke_w);
            v += STROKE * gauss(polyline_distance(p, &profile), stroke_w);
            v += VAULT * gauss(polyline_distance(p, &vault), stroke_w);
            v += landmarks
                .iter()
                .map(|&l| MARKER * gauss(p.distance(l), marker_w))
                .sum::<f64>();
            v += noise.sample(rng);
            data.push(f64::from(quantize(v)) / 255.0);
        }
    }
    Raster::new(size, size, data).expect("size*size pixels")
}

/// Generates `n` square samples in memory with ids `synth_0000`, ...
pub fn synth_samples(n: usize, image_size: usize, seed: u64) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one image".into()));
    }
    if image_size < 32 {
        return Err(Error::InvalidArgument(format!("image size {image_size} is below 32")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let pts = place_landmarks(image_size, &mut rng);
            let image = render_scene(image_size, &pts, &mut rng);
            Ok(Sample {
                id: format!("synth_{i:04}"),
                image,
                landmarks: LandmarkSet::new(pts, DEFAULT_PIXEL_SPACING_MM)?,
            })
        })
        .collect()
}

/// Generates a dataset on disk. `splits` lists how many images go to each
/// split, in order; ids run consecutively across splits.
pub fn gen_synth(splits: &[(Split, usize)], image_size: usize, seed: u64, out: &Path) -> Result<Vec<(Split, Sample)>> {
    let total = splits.iter().map(|&(_, n)| n).sum();
    let samples = synth_samples(total, image_size, seed)?;
    let labelled: Vec<(Split, Sample)> = splits
        .iter()
        .flat_map(|&(split, n)| std::iter::repeat_n(split, n))
        .zip(samples)
        .collect();
    save_dataset(out, &labelled)?;
    Ok(labelled)
}
