//! Landmark sets, Gaussian heatmap targets and sub-pixel decoding.
//!
//! Coordinates are `(x, y)` in pixels with x to the right, y downwards and the
//! origin at the centre of the top-left pixel. Heatmap cell `(u, v)` sits at
//! image position `(u * stride, v * stride)`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::NUM_LANDMARKS;

pub const DEFAULT_SIGMA: f64 = 1.5;
pub const DEFAULT_PIXEL_SPACING_MM: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

/// The 19 landmarks of one image plus its physical pixel pitch.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Point>,
    pixel_spacing_mm: f64,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point>, pixel_spacing_mm: f64) -> Result<Self> {
        if points.len() != NUM_LANDMARKS {
            return Err(Error::InvalidArgument(format!(
                "a landmark set has {NUM_LANDMARKS} points, got {}",
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(format!("landmark {} is not finite", i + 1)));
        }
        if !(pixel_spacing_mm > 0.0 && pixel_spacing_mm.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pixel spacing must be positive, got {pixel_spacing_mm}"
            )));
        }
        Ok(Self {
            points,
            pixel_spacing_mm,
        })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn pixel_spacing_mm(&self) -> f64 {
        self.pixel_spacing_mm
    }

    /// 1-based landmark lookup, matching the usual landmark numbering.
    pub fn landmark(&self, number: usize) -> Point {
        self.points[number - 1]
    }

    /// Applies `f` to every point, keeping the spacing.
    pub fn map(&self, f: impl FnMut(Point) -> Point) -> Result<Self> {
        Self::new(self.points.iter().copied().map(f).collect(), self.pixel_spacing_mm)
    }

    pub fn all_within(&self, width: usize, height: usize) -> bool {
        self.points.iter().all(|p| in_bounds(*p, width, height))
    }
}

pub fn in_bounds(p: Point, width: usize, height: usize) -> bool {
    p.x >= 0.0 && p.y >= 0.0 && p.x <= (width - 1) as f64 && p.y <= (height - 1) as f64
}

/// One Gaussian channel per landmark on the heatmap grid.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack {
    /// `[K, Hh, Wh]`
    pub maps: Tensor,
    pub stride: usize,
    pub sigma: f64,
    /// Landmarks that fell outside the image when encoding.
    pub outside: Vec<bool>,
}

impl HeatmapStack {
    /// Wraps raw maps (`[K, Hh, Wh]`) such as network output.
    pub fn from_maps(maps: Tensor, stride: usize, sigma: f64) -> Result<Self> {
        let &[k, _, _] = maps.shape() else {
            return Err(Error::shape("heatmap", format!("expected [K, H, W], got {:?}", maps.shape())));
        };
        if stride == 0 {
            return Err(Error::InvalidArgument("heatmap stride must be positive".into()));
        }
        Ok(Self {
            maps,
            stride,
            sigma,
            outside: vec![false; k],
        })
    }

    pub fn channels(&self) -> usize {
        self.maps.shape()[0]
    }

    pub fn size(&self) -> (usize, usize) {
        (self.maps.shape()[1], self.maps.shape()[2])
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let (h, w) = self.size();
        &self.maps.data()[k * h * w..(k + 1) * h * w]
    }
}

/// Renders unnormalised Gaussians `exp(-d^2 / (2 sigma^2))` centred at each
/// landmark divided by the stride (no rounding).
pub fn encode_targets(
    points: &[Point],
    image_size: (usize, usize),
    heatmap_size: (usize, usize),
    sigma: f64,
) -> Result<HeatmapStack> {
    let (ih, iw) = image_size;
    let (hh, hw) = heatmap_size;
    if hh == 0 || hw == 0 || ih % hh != 0 || iw % hw != 0 || ih / hh != iw / hw {
        return Err(Error::InvalidArgument(format!(
            "heatmap {hh}x{hw} does not divide image {ih}x{iw} by one integer stride"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let stride = ih / hh;
    let denom = 2.0 * sigma * sigma;
    let mut data = Vec::with_capacity(points.len() * hh * hw);
    let mut outside = Vec::with_capacity(points.len());
    for p in points {
        outside.push(!in_bounds(*p, iw, ih));
        let (cx, cy) = (p.x / stride as f64, p.y / stride as f64);
        for v in 0..hh {
            let dy = v as f64 - cy;
            for u in 0..hw {
                let dx = u as f64 - cx;
                data.push((-(dx * dx + dy * dy) / denom).exp());
            }
        }
    }
    Ok(HeatmapStack {
        maps: Tensor::new(&[points.len(), hh, hw], data)?,
        stride,
        sigma,
        outside,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decoded {
    pub point: Point,
    pub confidence: f64,
}

/// Argmax with a quarter-cell shift toward the larger neighbour on each
/// axis, mapped back to image pixels. Ties resolve to the first cell in
/// row-major order.
pub fn decode(heatmaps: &HeatmapStack) -> Vec<Decoded> {
    let (h, w) = heatmaps.size();
    (0..heatmaps.channels())
        .map(|k| {
            let map = heatmaps.channel(k);
            let mut best = 0;
            for (i, &v) in map.iter().enumerate() {
                if v > map[best] {
                    best = i;
                }
            }
            let (row, col) = (best / w, best % w);
            let mut x = col as f64;
            let mut y = row as f64;
            if col > 0 && col + 1 < w {
                x += 0.25 * quarter_sign(map[best + 1] - map[best - 1]);
            }
            if row > 0 && row + 1 < h {
                y += 0.25 * quarter_sign(map[best + w] - map[best - w]);
            }
            let s = heatmaps.stride as f64;
            Decoded {
                point: Point::new(x * s, y * s),
                confidence: map[best].max(0.0),
            }
        })
        .collect()
}

fn quarter_sign(diff: f64) -> f64 {
    if diff > 0.0 {
        1.0
    } else if diff < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Decodes a 19-channel stack into a landmark set plus confidences.
pub fn decode_landmarks(heatmaps: &HeatmapStack, pixel_spacing_mm: f64) -> Result<(LandmarkSet, Vec<f64>)> {
    let decoded = decode(heatmaps);
    let conf = decoded.iter().map(|d| d.confidence).collect();
    let set = LandmarkSet::new(decoded.iter().map(|d| d.point).collect(), pixel_spacing_mm)?;
    Ok((set, conf))
}

pub fn map_patch_to_global(local: Point, origin: Point) -> Point {
    local + origin
}
