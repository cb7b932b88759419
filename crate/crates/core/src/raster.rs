//! Single-channel floating-point images.

use crate::error::{Error, Result};
use crate::heatmap::Point;

/// Row-major grayscale raster, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::shape(
                "raster",
                format!("{width}x{height} raster with {} values", data.len()),
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample at a real position; zero outside the image.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let at = |xi: f64, yi: f64| -> f64 {
            if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
                0.0
            } else {
                self.data[yi as usize * self.width + xi as usize]
            }
        };
        let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1.0, y0) * fx;
        let bot = at(x0, y0 + 1.0) * (1.0 - fx) + at(x0 + 1.0, y0 + 1.0) * fx;
        top * (1.0 - fy) + bot * fy
    }

    /// Copies the `w x h` window whose top-left pixel is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::shape(
                "crop",
                format!("{w}x{h} window at ({x0}, {y0}) exceeds {}x{}", self.width, self.height),
            ));
        }
        let mut data = Vec::with_capacity(w * h);
        for row in y0..y0 + h {
            data.extend_from_slice(&self.data[row * self.width + x0..row * self.width + x0 + w]);
        }
        Self::new(w, h, data)
    }

    /// Half-pixel-centred bilinear resize with edge clamping.
    pub fn resize(&self, width: usize, height: usize) -> Self {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let map = ScaleMap::between((self.width, self.height), (width, height));
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                let p = map.to_source(Point::new(u as f64, v as f64));
                let x = p.x.clamp(0.0, (self.width - 1) as f64);
                let y = p.y.clamp(0.0, (self.height - 1) as f64);
                data.push(self.sample(x, y));
            }
        }
        Self { width, height, data }
    }
}

/// Coordinate map between a source grid and a resized grid, consistent
/// with [`Raster::resize`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleMap {
    sx: f64,
    sy: f64,
}

impl ScaleMap {
    /// `source` and `target` are `(width, height)`.
    pub fn between(source: (usize, usize), target: (usize, usize)) -> Self {
        Self {
            sx: target.0 as f64 / source.0 as f64,
            sy: target.1 as f64 / source.1 as f64,
        }
    }

    pub fn to_target(&self, p: Point) -> Point {
        Point::new((p.x + 0.5) * self.sx - 0.5, (p.y + 0.5) * self.sy - 0.5)
    }

    pub fn to_source(&self, p: Point) -> Point {
        Point::new((p.x + 0.5) / self.sx - 0.5, (p.y + 0.5) / self.sy - 0.5)
    }
}
