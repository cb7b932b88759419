//! Clinical cephalometric measurements, their anatomical classes, and
//! classification agreement (confusion matrices and success classification
//! rate).
//!
//! Three-point angles put the vertex in the middle argument. Inter-line
//! angles are the acute angle between undirected lines.

use crate::error::{Error, Result};
use crate::heatmap::{LandmarkSet, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Measurement {
    Anb,
    Snb,
    Sna,
    Odi,
    Apdi,
    Fhi,
    Fma,
    Mw,
}

impl Measurement {
    pub const ALL: [Measurement; 8] = [
        Measurement::Anb,
        Measurement::Snb,
        Measurement::Sna,
        Measurement::Odi,
        Measurement::Apdi,
        Measurement::Fhi,
        Measurement::Fma,
        Measurement::Mw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Measurement::Anb => "ANB",
            Measurement::Snb => "SNB",
            Measurement::Sna => "SNA",
            Measurement::Odi => "ODI",
            Measurement::Apdi => "APDI",
            Measurement::Fhi => "FHI",
            Measurement::Fma => "FMA",
            Measurement::Mw => "MW",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Measurement::Fhi => "ratio",
            Measurement::Mw => "mm",
            _ => "deg",
        }
    }

    pub fn num_classes(self) -> usize {
        if self == Measurement::Mw {
            4
        } else {
            3
        }
    }

    /// Closed normal (class 1) interval.
    pub fn normal_range(self) -> (f64, f64) {
        match self {
            Measurement::Anb => (3.2, 5.7),
            Measurement::Snb => (74.6, 78.7),
            Measurement::Sna => (79.4, 83.2),
            Measurement::Odi => (68.4, 80.5),
            Measurement::Apdi => (77.6, 85.2),
            Measurement::Fhi => (0.65, 0.75),
            Measurement::Fma => (26.8, 31.4),
            Measurement::Mw => (2.0, 4.5),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Class label 1..=4.
pub type Class = u8;

/// Maps a finite value to its class. Class-1 intervals are closed; outside
/// them the side decides between classes 2 and 3. MW additionally splits the
/// low side at zero and puts values above its range in class 4.
pub fn classify(m: Measurement, value: f64) -> Class {
    let (lo, hi) = m.normal_range();
    if (lo..=hi).contains(&value) {
        return 1;
    }
    let above = value > hi;
    match m {
        Measurement::Anb | Measurement::Sna | Measurement::Odi | Measurement::Fhi | Measurement::Fma => {
            if above {
                2
            } else {
                3
            }
        }
        Measurement::Snb | Measurement::Apdi => {
            if above {
                3
            } else {
                2
            }
        }
        Measurement::Mw => {
            if above {
                4
            } else if value >= 0.0 {
                2
            } else {
                3
            }
        }
    }
}

/// Angle at vertex `v` between rays `v->p` and `v->q`, in degrees.
pub fn angle_at(p: Point, v: Point, q: Point) -> Result<f64> {
    let a = p - v;
    let b = q - v;
    let (na, nb) = (a.x.hypot(a.y), b.x.hypot(b.y));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("angle ray of zero length".into()));
    }
    Ok((a.x * b.y - a.y * b.x).abs().atan2(a.x * b.x + a.y * b.y).to_degrees())
}

/// Acute angle between the undirected lines `a1a2` and `b1b2`, in `[0, 90]`.
pub fn line_angle(a1: Point, a2: Point, b1: Point, b2: Point) -> Result<f64> {
    let a = a2 - a1;
    let b = b2 - b1;
    let (na, nb) = (a.x.hypot(a.y), b.x.hypot(b.y));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("line through coincident points".into()));
    }
    Ok((a.x * b.y - a.y * b.x).abs().atan2((a.x * b.x + a.y * b.y).abs()).to_degrees())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClinicalMeasurements {
    values: [Option<f64>; 8],
    problems: Vec<(Measurement, String)>,
}

impl ClinicalMeasurements {
    pub fn get(&self, m: Measurement) -> Option<f64> {
        self.values[m.index()]
    }

    /// Measurements that could not be computed, with the reason.
    pub fn problems(&self) -> &[(Measurement, String)] {
        &self.problems
    }

    pub fn classes(&self) -> [Option<Class>; 8] {
        Measurement::ALL.map(|m| self.get(m).map(|v| classify(m, v)))
    }
}

/// Computes all eight measurements; a degenerate sub-geometry only voids the
/// measurement that needs it.
pub fn measure(l: &LandmarkSet) -> ClinicalMeasurements {
    let p = |n: usize| l.landmark(n);
    let mut values = [None; 8];
    let mut problems = Vec::new();
    for m in Measurement::ALL {
        let r = match m {
            Measurement::Anb => angle_at(p(5), p(2), p(6)),
            Measurement::Snb => angle_at(p(1), p(2), p(6)),
            Measurement::Sna => angle_at(p(1), p(2), p(5)),
            Measurement::Odi => line_angle(p(5), p(6), p(8), p(10))
                .and_then(|a| Ok(a + line_angle(p(3), p(4), p(17), p(18))?)),
            Measurement::Apdi => line_angle(p(3), p(4), p(2), p(7)).and_then(|a| {
                Ok(a + line_angle(p(2), p(7), p(5), p(6))? + line_angle(p(3), p(4), p(17), p(18))?)
            }),
            Measurement::Fhi => {
                let denom = p(2).distance(p(8));
                if denom == 0.0 {
                    Err(Error::Degenerate("landmarks 2 and 8 coincide".into()))
                } else {
                    Ok(p(1).distance(p(10)) / denom)
                }
            }
            Measurement::Fma => line_angle(p(1), p(2), p(10), p(8)),
            Measurement::Mw => Ok((p(12).x - p(11).x) * l.pixel_spacing_mm()),
        };
        match r {
            Ok(v) => values[m.index()] = Some(v),
            Err(e) => problems.push((m, e.to_string())),
        }
    }
    ClinicalMeasurements { values, problems }
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    /// Row-normalised percentages; `None` for rows without samples.
    pub fn row_percentages(&self) -> Vec<Option<Vec<f64>>> {
        self.counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                (total > 0).then(|| row.iter().map(|&c| 100.0 * c as f64 / total as f64).collect())
            })
            .collect()
    }

    /// Mean diagonal percentage over non-empty rows.
    pub fn scr(&self) -> f64 {
        let diag: Vec<f64> = self
            .row_percentages()
            .iter()
            .enumerate()
            .filter_map(|(i, row)| row.as_ref().map(|r| r[i]))
            .collect();
        if diag.is_empty() {
            0.0
        } else {
            diag.iter().sum::<f64>() / diag.len() as f64
        }
    }
}

/// Builds the confusion matrix of one measurement and its SCR in percent.
pub fn confusion_and_scr(
    num_classes: usize,
    true_classes: &[Class],
    pred_classes: &[Class],
) -> Result<(ConfusionMatrix, f64)> {
    if true_classes.len() != pred_classes.len() {
        return Err(Error::InvalidArgument(format!(
            "{} true labels vs {} predicted",
            true_classes.len(),
            pred_classes.len()
        )));
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in true_classes.iter().zip(pred_classes) {
        let (ti, pi) = (t as usize, p as usize);
        if !(1..=num_classes).contains(&ti) || !(1..=num_classes).contains(&pi) {
            return Err(Error::InvalidArgument(format!(
                "class label outside 1..={num_classes}: {t}/{p}"
            )));
        }
        counts[ti - 1][pi - 1] += 1;
    }
    let cm = ConfusionMatrix { counts };
    let scr = cm.scr();
    Ok((cm, scr))
}
