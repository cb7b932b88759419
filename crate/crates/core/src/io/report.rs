//! CSV reports. Floats use fixed precision and rows a fixed order, so equal
//! inputs give byte-identical files.

use std::path::Path;

use csv::Writer;

use crate::clinical::{confusion_and_scr, measure, Class, ConfusionMatrix, Measurement};
use crate::error::{Error, Result};
use crate::heatmap::LandmarkSet;
use crate::metrics::{empirical_cdf, EvalReport};

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

fn writer(path: &Path) -> Result<Writer<std::fs::File>> {
    Writer::from_path(path).map_err(Error::from)
}

fn finish(mut w: Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-landmark MRE, SD and SDR rows, then an `average` row.
pub fn write_landmark_table(path: &Path, r: &EvalReport) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["landmark".to_string(), "mre_mm".into(), "sd_mm".into()];
    header.extend(r.thresholds.iter().map(|t| format!("sdr_{t}mm_pct")));
    w.write_record(&header)?;
    let row = |name: String, (mre, sd): (f64, f64), sdr: &[f64]| {
        let mut rec = vec![name, fmt(mre), fmt(sd)];
        rec.extend(sdr.iter().map(|&s| fmt(100.0 * s)));
        rec
    };
    for (k, (stats, sdr)) in r.landmark_stats.iter().zip(&r.landmark_sdr).enumerate() {
        w.write_record(row(format!("L{}", k + 1), *stats, sdr))?;
    }
    w.write_record(row("average".into(), r.overall, &r.overall_sdr))?;
    finish(w, path)
}

/// One row per image: NME and per-image mean radial error.
pub fn write_per_image(path: &Path, r: &EvalReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["id", "nme", "ipe_mm"])?;
    for ((id, nme), ipe) in r.ids.iter().zip(&r.nme).zip(&r.ipe) {
        w.write_record([id.clone(), format!("{nme:.6}"), fmt(*ipe)])?;
    }
    w.write_record(["mean".to_string(), format!("{:.6}", r.mean_nme()), String::new()])?;
    finish(w, path)
}

/// Empirical CDF of the per-image error.
pub fn write_ipe_cdf(path: &Path, r: &EvalReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["ipe_mm", "cumulative_fraction"])?;
    for (v, f) in empirical_cdf(&r.ipe) {
        w.write_record([fmt(v), format!("{f:.6}")])?;
    }
    finish(w, path)
}

/// Writes `landmarks.csv`, `per_image.csv` and `ipe_cdf.csv` into `dir`.
pub fn write_eval(dir: &Path, r: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_landmark_table(&dir.join("landmarks.csv"), r)?;
    write_per_image(&dir.join("per_image.csv"), r)?;
    write_ipe_cdf(&dir.join("ipe_cdf.csv"), r)
}

/// Confusion matrix and SCR of one measurement over a set of images.
#[derive(Clone, Debug, PartialEq)]
pub struct ClinicalSummary {
    pub measurement: Measurement,
    pub confusion: ConfusionMatrix,
    pub scr: f64,
    /// Images skipped because the value was undefined on either side.
    pub skipped: usize,
}

/// Compares classes from predicted and true landmarks.
pub fn clinical_summaries(preds: &[LandmarkSet], gts: &[LandmarkSet]) -> Result<Vec<ClinicalSummary>> {
    let pm: Vec<_> = preds.iter().map(measure).collect();
    let gm: Vec<_> = gts.iter().map(measure).collect();
    Measurement::ALL
        .iter()
        .map(|&m| {
            let pairs: Vec<(Class, Class)> = gm
                .iter()
                .zip(&pm)
                .filter_map(|(g, p)| Some((g.classes()[m.index()]?, p.classes()[m.index()]?)))
                .collect();
            let (t, p): (Vec<Class>, Vec<Class>) = pairs.iter().copied().unzip();
            let (confusion, scr) = confusion_and_scr(m.num_classes(), &t, &p)?;
            Ok(ClinicalSummary {
                measurement: m,
                confusion,
                scr,
                skipped: gts.len() - pairs.len(),
            })
        })
        .collect()
}

/// Writes `measurements.csv` (value and class per image and measurement,
/// predicted next to true) and `classification.csv` (row-normalised
/// confusion matrices and SCR).
pub fn write_clinical(dir: &Path, ids: &[String], preds: &[LandmarkSet], gts: &[LandmarkSet]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("measurements.csv");
    let mut w = writer(&path)?;
    w.write_record(["id", "measurement", "unit", "pred_value", "pred_class", "true_value", "true_class"])?;
    for ((id, p), g) in ids.iter().zip(preds).zip(gts) {
        let (pm, gm) = (measure(p), measure(g));
        for m in Measurement::ALL {
            let val = |v: Option<f64>| v.map_or_else(String::new, fmt);
            let cls = |c: Option<Class>| c.map_or_else(String::new, |c| c.to_string());
            w.write_record([
                id.clone(),
                m.name().to_string(),
                m.unit().to_string(),
                val(pm.get(m)),
                cls(pm.classes()[m.index()]),
                val(gm.get(m)),
                cls(gm.classes()[m.index()]),
            ])?;
        }
    }
    finish(w, &path)?;

    let path = dir.join("classification.csv");
    let mut w = writer(&path)?;
    w.write_record(["measurement", "true_class", "pred_class", "count", "row_pct", "scr_pct"])?;
    for s in clinical_summaries(preds, gts)? {
        let pct = s.confusion.row_percentages();
        for (t, row) in s.confusion.counts.iter().enumerate() {
            for (p, &count) in row.iter().enumerate() {
                let row_pct = pct[t].as_ref().map_or_else(String::new, |r| fmt(r[p]));
                w.write_record([
                    s.measurement.name().to_string(),
                    (t + 1).to_string(),
                    (p + 1).to_string(),
                    count.to_string(),
                    row_pct,
                    fmt(s.scr),
                ])?;
            }
        }
    }
    finish(w, &path)
}
