use crate::error::{Error, Result};
use crate::heatmap::Point;
use crate::raster::Raster;

/// Square region-of-interest patches around a landmark.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSpec {
    /// Side in image pixels; even.
    pub patch_size: usize,
    /// Uniform training-time perturbation of the patch centre, per axis.
    pub jitter_px_max: f64,
    pub patches_per_image: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            patch_size: 512,
            jitter_px_max: 40.0,
            patches_per_image: 2,
        }
    }
}

impl PatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "patch size must be positive and even, got {}",
                self.patch_size
            )));
        }
        if !(self.jitter_px_max >= 0.0 && self.jitter_px_max < self.patch_size as f64 / 2.0) {
            return Err(Error::InvalidArgument(format!(
                "jitter {} must be in [0, {})",
                self.jitter_px_max,
                self.patch_size / 2
            )));
        }
        if self.patches_per_image == 0 {
            return Err(Error::InvalidArgument("patches_per_image must be positive".into()));
        }
        Ok(())
    }
}

/// Top-left corner of the patch centred (after rounding) on `center`, clamped
/// so the patch lies fully inside the image.
pub fn patch_origin(image_w: usize, image_h: usize, center: Point, size: usize) -> Result<(usize, usize)> {
    if image_w < size || image_h < size {
        return Err(Error::InvalidArgument(format!(
            "{size}px patch does not fit a {image_w}x{image_h} image"
        )));
    }
    let half = (size / 2) as f64;
    let clamp = |c: f64, extent: usize| -> usize {
        let o = c.round() - half;
        o.clamp(0.0, (extent - size) as f64) as usize
    };
    Ok((clamp(center.x, image_w), clamp(center.y, image_h)))
}

/// Copies the patch around `center` and returns it with its origin.
pub fn extract_patch(image: &Raster, center: Point, spec: &PatchSpec) -> Result<(Raster, Point)> {
    let (x0, y0) = patch_origin(image.width(), image.height(), center, spec.patch_size)?;
    let patch = image.crop(x0, y0, spec.patch_size, spec.patch_size)?;
    Ok((patch, Point::new(x0 as f64, y0 as f64)))
}
