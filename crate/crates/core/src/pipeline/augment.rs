//! Random photometric and geometric augmentation.
//!
//! Each augmentation is a named [`Augmentation`] held by an
//! [`AugmentationRegistry`]; [`augment`] runs the standard registry in order
//! (rotation, noise, crop, translation). Geometric augmentations move the
//! landmarks with the same map they apply to the pixels. If any landmark
//! leaves the image the whole draw is rejected and retried.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Sample;
use crate::heatmap::Point;
use crate::raster::Raster;

const MAX_ATTEMPTS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub rotation_deg_max: f64,
    /// Standard deviation of additive noise, as a fraction of the `[0, 1]` range.
    pub noise_std: f64,
    /// Smallest crop side as a fraction of the image side.
    pub crop_scale_min: f64,
    pub translate_px_max: f64,
    pub rotation: bool,
    pub noise: bool,
    pub crop: bool,
    pub translate: bool,
    /// Augmented copies generated per source image.
    pub copies: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_deg_max: 10.0,
            noise_std: 0.02,
            crop_scale_min: 0.9,
            translate_px_max: 20.0,
            rotation: true,
            noise: true,
            crop: true,
            translate: true,
            copies: 10,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Every magnitude zero: augmentation is the identity.
    pub fn identity() -> Self {
        Self {
            rotation_deg_max: 0.0,
            noise_std: 0.0,
            crop_scale_min: 1.0,
            translate_px_max: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let mags = [self.rotation_deg_max, self.noise_std, self.translate_px_max];
        if mags.iter().any(|m| !(*m >= 0.0)) || !(self.crop_scale_min > 0.0 && self.crop_scale_min <= 1.0) {
            return Err(crate::Error::InvalidArgument(format!(
                "augmentation magnitudes must be nonnegative and crop_scale_min in (0, 1]: {self:?}"
            )));
        }
        Ok(())
    }
}

/// One stage of the augmentation chain.
pub trait Augmentation: Send + Sync {
    fn name(&self) -> &'static str;

    fn enabled(&self, cfg: &AugmentConfig) -> bool;

    /// Applies the augmentation; landmarks may end up out of bounds, which the
    /// caller rejects.
    fn apply(&self, sample: &Sample, cfg: &AugmentConfig, rng: &mut dyn RngCore) -> Sample;
}

pub struct Rotation;
pub struct GaussianNoise;
pub struct RandomCrop;
pub struct Translation;

/// Rotates by `degrees` about the image centre with bilinear resampling.
pub fn rotate(sample: &Sample, degrees: f64) -> Sample {
    let img = &sample.image;
    let (w, h) = (img.width(), img.height());
    let c = Point::new((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = (degrees * PI / 180.0).sin_cos();
    let mut out = Raster::filled(w, h, 0.0);
    for v in 0..h {
        for u in 0..w {
            let d = Point::new(u as f64, v as f64) - c;
            // inverse rotation
            let src = Point::new(cos * d.x + sin * d.y, -sin * d.x + cos * d.y) + c;
            out.set(u, v, img.sample(src.x, src.y));
        }
    }
    let landmarks = sample
        .landmarks
        .map(|p| {
            let d = p - c;
            Point::new(cos * d.x - sin * d.y, sin * d.x + cos * d.y) + c
        })
        .expect("rotation keeps landmarks finite");
    Sample {
        id: sample.id.clone(),
        image: out,
        landmarks,
    }
}

/// Shifts by whole pixels with zero fill.
pub fn translate(sample: &Sample, dx: isize, dy: isize) -> Sample {
    let img = &sample.image;
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut out = Raster::filled(img.width(), img.height(), 0.0);
    for v in 0..h {
        for u in 0..w {
            let (su, sv) = (u - dx, v - dy);
            if su >= 0 && sv >= 0 && su < w && sv < h {
                out.set(u as usize, v as usize, img.get(su as usize, sv as usize));
            }
        }
    }
    let landmarks = sample
        .landmarks
        .map(|p| Point::new(p.x + dx as f64, p.y + dy as f64))
        .expect("translation keeps landmarks finite");
    Sample {
        id: sample.id.clone(),
        image: out,
        landmarks,
    }
}

/// Crops the window of relative side `scale` at top-left `(ox, oy)` and
/// resizes it back to the full extent.
pub fn crop_resize(sample: &Sample, scale: f64, ox: f64, oy: f64) -> Sample {
    let img = &sample.image;
    let (w, h) = (img.width(), img.height());
    let mut out = Raster::filled(w, h, 0.0);
    for v in 0..h {
        for u in 0..w {
            let x = ox + (u as f64 + 0.5) * scale - 0.5;
            let y = oy + (v as f64 + 0.5) * scale - 0.5;
            out.set(u, v, img.sample(x, y));
        }
    }
    let landmarks = sample
        .landmarks
        .map(|p| Point::new((p.x - ox + 0.5) / scale - 0.5, (p.y - oy + 0.5) / scale - 0.5))
        .expect("crop keeps landmarks finite");
    Sample {
        id: sample.id.clone(),
        image: out,
        landmarks,
    }
}

impl Augmentation for Rotation {
    fn name(&self) -> &'static str {
        "rotation"
    }

    fn enabled(&self, cfg: &AugmentConfig) -> bool {
        cfg.rotation && cfg.rotation_deg_max > 0.0
    }

    fn apply(&self, sample: &Sample, cfg: &AugmentConfig, rng: &mut dyn RngCore) -> Sample {
        let deg = rng.random_range(-cfg.rotation_deg_max..=cfg.rotation_deg_max);
        rotate(sample, deg)
    }
}

impl Augmentation for GaussianNoise {
    fn name(&self) -> &'static str {
        "noise"
    }

    fn enabled(&self, cfg: &AugmentConfig) -> bool {
        cfg.noise && cfg.noise_std > 0.0
    }

    fn apply(&self, sample: &Sample, cfg: &AugmentConfig, rng: &mut dyn RngCore) -> Sample {
        let normal = Normal::new(0.0, cfg.noise_std).expect("validated std");
        let mut out = sample.clone();
        for v in out.image.data_mut() {
            *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
        }
        out
    }
}

impl Augmentation for RandomCrop {
    fn name(&self) -> &'static str {
        "crop"
    }

    fn enabled(&self, cfg: &AugmentConfig) -> bool {
        cfg.crop && cfg.crop_scale_min < 1.0
    }

    fn apply(&self, sample: &Sample, cfg: &AugmentConfig, rng: &mut dyn RngCore) -> Sample {
        let scale = rng.random_range(cfg.crop_scale_min..=1.0);
        let (w, h) = (sample.image.width() as f64, sample.image.height() as f64);
        let ox = rng.random_range(0.0..=w * (1.0 - scale));
        let oy = rng.random_range(0.0..=h * (1.0 - scale));
        crop_resize(sample, scale, ox, oy)
    }
}

impl Augmentation for Translation {
    fn name(&self) -> &'static str {
        "translate"
    }

    fn enabled(&self, cfg: &AugmentConfig) -> bool {
        cfg.translate && cfg.translate_px_max >= 1.0
    }

    fn apply(&self, sample: &Sample, cfg: &AugmentConfig, rng: &mut dyn RngCore) -> Sample {
        let m = cfg.translate_px_max.floor() as i64;
        let dx = rng.random_range(-m..=m) as isize;
        let dy = rng.random_range(-m..=m) as isize;
        translate(sample, dx, dy)
    }
}

/// Augmentations keyed by name, applied in registration order.
#[derive(Default)]
pub struct AugmentationRegistry {
    entries: Vec<Box<dyn Augmentation>>,
}

impl AugmentationRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rotation, noise, crop, translation.
    pub fn standard() -> Self {
        let mut r = Self::new();
        r.register(Box::new(Rotation));
        r.register(Box::new(GaussianNoise));
        r.register(Box::new(RandomCrop));
        r.register(Box::new(Translation));
        r
    }

    /// Adds an augmentation, replacing any existing one with the same name in place.
    pub fn register(&mut self, aug: Box<dyn Augmentation>) {
        match self.entries.iter().position(|a| a.name() == aug.name()) {
            Some(i) => self.entries[i] = aug,
            None => self.entries.push(aug),
        }
    }

    pub fn get(&self, name: &str) -> Option<&dyn Augmentation> {
        self.entries.iter().find(|a| a.name() == name).map(|a| a.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|a| a.name()).collect()
    }

    /// Runs every enabled augmentation in order, redrawing up to 20 times
    /// while any landmark falls outside the image; falls back to the input.
    pub fn apply(&self, sample: &Sample, cfg: &AugmentConfig, rng: &mut dyn RngCore) -> Sample {
        let active: Vec<&dyn Augmentation> = self
            .entries
            .iter()
            .map(|a| a.as_ref())
            .filter(|a| a.enabled(cfg))
            .collect();
        if active.is_empty() {
            return sample.clone();
        }
        let (w, h) = (sample.image.width(), sample.image.height());
        for _ in 0..MAX_ATTEMPTS {
            let out = active
                .iter()
                .fold(sample.clone(), |s, a| a.apply(&s, cfg, rng));
            if out.landmarks.all_within(w, h) {
                return out;
            }
        }
        sample.clone()
    }
}

pub fn augment(sample: &Sample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Sample {
    AugmentationRegistry::standard().apply(sample, cfg, rng)
}

/// Each source sample followed by `cfg.copies` augmented variants with ids
/// `<id>_aug<n>`. Every source sample draws from its own stream derived from
/// `cfg.seed` and its position, so the result does not depend on batching.
pub fn expand(samples: &[Sample], cfg: &AugmentConfig) -> Vec<Sample> {
    let registry = AugmentationRegistry::standard();
    let mut out = Vec::with_capacity(samples.len() * (cfg.copies + 1));
    for (i, s) in samples.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (i as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
        out.push(s.clone());
        for n in 0..cfg.copies {
            let mut a = registry.apply(s, cfg, &mut rng);
            a.id = format!("{}_aug{n}", s.id);
            out.push(a);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::heatmap::LandmarkSet;

    fn sample() -> Sample {
        let image = Raster::new(32, 32, (0..1024).map(|i| (i % 17) as f64 / 17.0).collect()).unwrap();
        let pts = (0..19).map(|i| Point::new(8.0 + i as f64, 10.0 + (i % 5) as f64)).collect();
        Sample {
            id: "s".into(),
            image,
            landmarks: LandmarkSet::new(pts, 0.1).unwrap(),
        }
    }

    #[test]
    fn expand_keeps_originals_first() {
        let cfg = AugmentConfig {
            copies: 2,
            ..AugmentConfig::default()
        };
        let out = expand(&[sample()], &cfg);
        assert_eq!(out.len(), 3);
        assert_eq!(out[0], sample());
        assert_eq!(out[2].id, "s_aug1");
        assert_eq!(expand(&[sample()], &cfg), out);
    }

    #[test]
    fn identity_config_is_bit_identical() {
        let s = sample();
        let out = augment(&s, &AugmentConfig::identity(), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(out, s);
    }

    #[test]
    fn translation_moves_every_landmark() {
        let s = sample();
        let out = translate(&s, 5, -3);
        for (a, b) in out.landmarks.points().iter().zip(s.landmarks.points()) {
            assert_eq!(*a, Point::new(b.x + 5.0, b.y - 3.0));
        }
        assert_eq!(out.image.get(10, 10), s.image.get(5, 13));
        assert_eq!(out.image.get(0, 0), 0.0);
    }

    #[test]
    fn zero_rotation_keeps_landmarks() {
        let s = sample();
        let out = rotate(&s, 0.0);
        assert_eq!(out.landmarks, s.landmarks);
        assert_eq!(out.image, s.image);
    }

    #[test]
    fn noise_stays_in_range_and_count_is_kept() {
        let cfg = AugmentConfig {
            noise_std: 0.5,
            ..AugmentConfig::default()
        };
        let out = augment(&sample(), &cfg, &mut ChaCha8Rng::seed_from_u64(2));
        assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(out.landmarks.points().len(), 19);
        assert!(out.landmarks.all_within(32, 32));
    }

    #[test]
    fn registry_lookup_and_replace() {
        let mut r = AugmentationRegistry::standard();
        assert_eq!(r.names(), vec!["rotation", "noise", "crop", "translate"]);
        assert!(r.get("crop").is_some());
        assert!(r.get("shear").is_none());
        r.register(Box::new(Rotation));
        assert_eq!(r.names().len(), 4);
    }

    #[test]
    fn impossible_constraints_fall_back_to_identity() {
        let mut s = sample();
        // landmarks on the border: any translation pushes one outside
        let pts = (0..19)
            .map(|i| if i % 2 == 0 { Point::new(0.0, 0.0) } else { Point::new(31.0, 31.0) })
            .collect();
        s.landmarks = LandmarkSet::new(pts, 0.1).unwrap();
        let cfg = AugmentConfig {
            translate_px_max: 5.0,
            rotation: false,
            noise: false,
            crop: false,
            ..AugmentConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = augment(&s, &cfg, &mut rng);
        for p in out.landmarks.points() {
            assert!(crate::heatmap::in_bounds(*p, 32, 32));
        }
    }
}
