//! Landmark evaluation: radial error in millimetres, mean and population
//! standard deviation, success detection rate, inter-ocular normalised mean
//! error and per-image error with its empirical CDF.

use crate::error::{Error, Result};
use crate::heatmap::{LandmarkSet, Point};

/// Standard SDR thresholds in millimetres.
pub const SDR_THRESHOLDS_MM: [f64; 4] = [2.0, 2.5, 3.0, 4.0];

fn check_spacing(a: &LandmarkSet, b: &LandmarkSet) -> Result<()> {
    if a.pixel_spacing_mm() != b.pixel_spacing_mm() {
        return Err(Error::InvalidArgument(format!(
            "pixel spacing mismatch: {} vs {} mm",
            a.pixel_spacing_mm(),
            b.pixel_spacing_mm()
        )));
    }
    Ok(())
}

/// Per-landmark Euclidean error scaled to millimetres.
pub fn radial_errors(pred: &LandmarkSet, gt: &LandmarkSet) -> Result<Vec<f64>> {
    check_spacing(pred, gt)?;
    let s = gt.pixel_spacing_mm();
    Ok(pred
        .points()
        .iter()
        .zip(gt.points())
        .map(|(p, g)| p.distance(*g) * s)
        .collect())
}

/// Mean and population (1/M) standard deviation.
pub fn mre_sd(errors: &[f64]) -> Result<(f64, f64)> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("mean radial error of an empty list".into()));
    }
    let m = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / m;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / m;
    Ok((mean, var.sqrt()))
}

/// Fraction of errors `<= threshold`, one rate per threshold.
pub fn sdr(errors: &[f64], thresholds: &[f64]) -> Result<Vec<f64>> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("success rate of an empty list".into()));
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0)) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {t}")));
    }
    let n = errors.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| errors.iter().filter(|&&e| e <= t).count() as f64 / n)
        .collect())
}

/// Mean pixel error over the landmarks divided by the ground-truth distance
/// between landmarks 1 and 2.
pub fn nme(pred: &LandmarkSet, gt: &LandmarkSet) -> Result<f64> {
    let d = gt.landmark(1).distance(gt.landmark(2));
    if d == 0.0 {
        return Err(Error::Degenerate("landmarks 1 and 2 coincide".into()));
    }
    let n = gt.points().len() as f64;
    let total: f64 = pred
        .points()
        .iter()
        .zip(gt.points())
        .map(|(p, g)| p.distance(*g))
        .sum();
    Ok(total / n / d)
}

/// Per-image mean radial error in millimetres.
pub fn ipe(pred: &LandmarkSet, gt: &LandmarkSet) -> Result<f64> {
    let errs = radial_errors(pred, gt)?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Sorted values paired with empirical CDF ordinates `i/n`.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, (i + 1) as f64 / n))
        .collect()
}

pub fn average_annotators(a: &LandmarkSet, b: &LandmarkSet) -> Result<LandmarkSet> {
    check_spacing(a, b)?;
    let points = a
        .points()
        .iter()
        .zip(b.points())
        .map(|(p, q)| Point::new((p.x + q.x) / 2.0, (p.y + q.y) / 2.0))
        .collect();
    LandmarkSet::new(points, a.pixel_spacing_mm())
}

/// Aggregated evaluation over a set of images.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub ids: Vec<String>,
    /// `per_landmark[k][j]`: error of landmark `k` on image `j`, in mm.
    pub per_landmark: Vec<Vec<f64>>,
    /// `(MRE, SD)` per landmark.
    pub landmark_stats: Vec<(f64, f64)>,
    pub landmark_sdr: Vec<Vec<f64>>,
    pub overall: (f64, f64),
    pub overall_sdr: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub nme: Vec<f64>,
    pub ipe: Vec<f64>,
}

impl EvalReport {
    pub fn build(ids: &[String], preds: &[LandmarkSet], gts: &[LandmarkSet], thresholds: &[f64]) -> Result<Self> {
        if preds.len() != gts.len() || ids.len() != gts.len() {
            return Err(Error::InvalidArgument(format!(
                "{} ids, {} predictions, {} ground truths",
                ids.len(),
                preds.len(),
                gts.len()
            )));
        }
        if gts.is_empty() {
            return Err(Error::InvalidArgument("nothing to evaluate".into()));
        }
        let k = gts[0].points().len();
        let mut per_landmark = vec![Vec::with_capacity(gts.len()); k];
        let mut nmes = Vec::with_capacity(gts.len());
        let mut ipes = Vec::with_capacity(gts.len());
        for (p, g) in preds.iter().zip(gts) {
            let errs = radial_errors(p, g)?;
            for (slot, e) in per_landmark.iter_mut().zip(&errs) {
                slot.push(*e);
            }
            ipes.push(errs.iter().sum::<f64>() / errs.len() as f64);
            nmes.push(nme(p, g)?);
        }
        let landmark_stats = per_landmark.iter().map(|e| mre_sd(e)).collect::<Result<_>>()?;
        let landmark_sdr = per_landmark
            .iter()
            .map(|e| sdr(e, thresholds))
            .collect::<Result<_>>()?;
        let all: Vec<f64> = per_landmark.iter().flatten().copied().collect();
        Ok(Self {
            ids: ids.to_vec(),
            overall: mre_sd(&all)?,
            overall_sdr: sdr(&all, thresholds)?,
            per_landmark,
            landmark_stats,
            landmark_sdr,
            thresholds: thresholds.to_vec(),
            nme: nmes,
            ipe: ipes,
        })
    }

    pub fn mean_nme(&self) -> f64 {
        self.nme.iter().sum::<f64>() / self.nme.len() as f64
    }
}
