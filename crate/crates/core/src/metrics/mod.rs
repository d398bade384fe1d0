//! Segmentation quality measures and per-dataset reports.
//!
//! Dice and IoU are computed on predictions binarized at 0.5; MAE and the
//! three structure-aware measures use the continuous probability map.

mod edt;
mod emeasure;
mod fmeasure;
mod smeasure;

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{read_image, Manifest, Sample, Split};
use crate::error::{Error, Result};
use crate::model::CaraNet;
use crate::par;
use crate::tensor::{Real, Tensor};

/// Default binarization threshold for Dice and IoU.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// A single `H x W` plane in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w || data.is_empty() {
            return Err(Error::shape(format!("{h}x{w} plane cannot hold {} values", data.len())));
        }
        Ok(Plane { h, w, data })
    }

    /// Accepts any tensor whose leading extents are all 1.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() < 2 || s[..s.len() - 2].iter().any(|&d| d != 1) {
            return Err(Error::shape(format!("expected a single plane, got {s:?}")));
        }
        Plane::new(s[s.len() - 2], s[s.len() - 1], t.data().iter().map(|v| v.as_f64()).collect())
    }

    fn mask(&self) -> Result<Vec<bool>> {
        self.data
            .iter()
            .map(|&v| {
                if v == 1.0 {
                    Ok(true)
                } else if v == 0.0 {
                    Ok(false)
                } else {
                    Err(Error::Data(format!("ground truth value {v} is not binary")))
                }
            })
            .collect()
    }
}

fn pair(pred: &Plane, gt: &Plane) -> Result<Vec<bool>> {
    if (pred.h, pred.w) != (gt.h, gt.w) {
        return Err(Error::shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.h, pred.w, gt.h, gt.w
        )));
    }
    gt.mask()
}

/// `1` where `pred >= tau`.
pub fn binarize(pred: &Plane, tau: f64) -> Result<Plane> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("threshold {tau} not in (0, 1)")));
    }
    Ok(Plane {
        h: pred.h,
        w: pred.w,
        data: pred.data.iter().map(|&v| if v >= tau { 1.0 } else { 0.0 }).collect(),
    })
}

fn overlap(p: &Plane, g: &Plane) -> Result<(usize, usize, usize)> {
    let gm = pair(p, g)?;
    let pm = p.mask()?;
    let inter = pm.iter().zip(&gm).filter(|(a, b)| **a && **b).count();
    let np = pm.iter().filter(|&&b| b).count();
    let ng = gm.iter().filter(|&&b| b).count();
    Ok((inter, np, ng))
}

/// `2|P ∩ G| / (|P| + |G|)`; 1 when both are empty.
pub fn dice(p: &Plane, g: &Plane) -> Result<f64> {
    let (i, np, ng) = overlap(p, g)?;
    Ok(if np + ng == 0 { 1.0 } else { 2.0 * i as f64 / (np + ng) as f64 })
}

/// `|P ∩ G| / |P ∪ G|`; 1 when both are empty.
pub fn iou(p: &Plane, g: &Plane) -> Result<f64> {
    let (i, np, ng) = overlap(p, g)?;
    let union = np + ng - i;
    Ok(if union == 0 { 1.0 } else { i as f64 / union as f64 })
}

pub fn mae(pred: &Plane, g: &Plane) -> Result<f64> {
    pair(pred, g)?;
    let s: f64 = pred.data.iter().zip(&g.data).map(|(p, g)| (p - g).abs()).sum();
    Ok(s / pred.data.len() as f64)
}

/// Weighted F-measure (beta^2 = 1). An empty ground truth scores 1 when the
/// prediction is empty (mean below 1e-6) and 0 otherwise.
pub fn f_beta_w(pred: &Plane, g: &Plane) -> Result<f64> {
    let gm = pair(pred, g)?;
    Ok(fmeasure::f_beta_w_plane(&pred.data, &gm, g.h, g.w))
}

/// Structure measure with alpha = 0.5.
pub fn s_alpha(pred: &Plane, g: &Plane) -> Result<f64> {
    let gm = pair(pred, g)?;
    Ok(smeasure::s_alpha_plane(&pred.data, &gm, g.h, g.w))
}

/// Maximum enhanced-alignment score over thresholds `k / 255`.
pub fn e_phi_max(pred: &Plane, g: &Plane) -> Result<f64> {
    let gm = pair(pred, g)?;
    Ok(emeasure::e_phi_max_plane(&pred.data, &gm))
}

/// Enhanced-alignment score of `pred >= tau`.
pub fn e_phi_at(pred: &Plane, g: &Plane, tau: f64) -> Result<f64> {
    let gm = pair(pred, g)?;
    Ok(emeasure::e_phi_at(&pred.data, &gm, tau))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleMetrics {
    pub id: String,
    pub size_ratio: f64,
    pub dice: f64,
    pub iou: f64,
    pub f_beta_w: f64,
    pub s_alpha: f64,
    pub e_phi_max: f64,
    pub mae: f64,
}

impl SampleMetrics {
    fn values(&self) -> [f64; 7] {
        [
            self.size_ratio,
            self.dice,
            self.iou,
            self.f_beta_w,
            self.s_alpha,
            self.e_phi_max,
            self.mae,
        ]
    }
}

/// Every measure for one probability map against its mask.
pub fn evaluate_sample(id: &str, pred: &Plane, gt: &Plane) -> Result<SampleMetrics> {
    let bin = binarize(pred, DEFAULT_THRESHOLD)?;
    let gm = pair(pred, gt)?;
    Ok(SampleMetrics {
        id: id.to_string(),
        size_ratio: gm.iter().filter(|&&b| b).count() as f64 / gm.len() as f64,
        dice: dice(&bin, gt)?,
        iou: iou(&bin, gt)?,
        f_beta_w: f_beta_w(pred, gt)?,
        s_alpha: s_alpha(pred, gt)?,
        e_phi_max: e_phi_max(pred, gt)?,
        mae: mae(pred, gt)?,
    })
}

pub const REPORT_HEADER: &str = "id,size_ratio,dice,iou,fbw,salpha,ephi,mae";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<SampleMetrics>,
}

impl MetricReport {
    /// Column means in header order (size_ratio first); `None` when empty.
    pub fn means(&self) -> Option<SampleMetrics> {
        if self.rows.is_empty() {
            return None;
        }
        let mut acc = [0.0; 7];
        for r in &self.rows {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        let n = self.rows.len() as f64;
        let m = acc.map(|a| a / n);
        Some(SampleMetrics {
            id: "MEAN".into(),
            size_ratio: m[0],
            dice: m[1],
            iou: m[2],
            f_beta_w: m[3],
            s_alpha: m[4],
            e_phi_max: m[5],
            mae: m[6],
        })
    }

    pub fn mean_dice(&self) -> f64 {
        self.means().map_or(0.0, |m| m.dice)
    }

    /// CSV with a trailing `MEAN` row. Values use the shortest exact
    /// round-trip representation.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        let mean = self.means();
        for r in self.rows.iter().chain(mean.iter()) {
            let _ = write!(s, "{}", r.id);
            for v in r.values() {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// Parse a report CSV; the `MEAN` row is skipped and recomputed.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == REPORT_HEADER => {}
            other => {
                return Err(Error::Data(format!(
                    "report header {:?} does not match {REPORT_HEADER:?}",
                    other.unwrap_or("")
                )))
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(Error::Data(format!("report line {}: expected 8 fields", i + 2)));
            }
            if f[0] == "MEAN" {
                continue;
            }
            let mut v = [0.0; 7];
            for (k, slot) in v.iter_mut().enumerate() {
                *slot = f[k + 1]
                    .parse()
                    .map_err(|_| Error::Data(format!("report line {}: bad number {:?}", i + 2, f[k + 1])))?;
            }
            rows.push(SampleMetrics {
                id: f[0].to_string(),
                size_ratio: v[0],
                dice: v[1],
                iou: v[2],
                f_beta_w: v[3],
                s_alpha: v[4],
                e_phi_max: v[5],
                mae: v[6],
            });
        }
        Ok(MetricReport { rows })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Evaluate probability maps against samples, in sample order.
pub fn evaluate_predictions(samples: &[Sample], preds: &[Tensor<f32>]) -> Result<MetricReport> {
    if samples.len() != preds.len() {
        return Err(Error::invalid(format!(
            "{} samples but {} predictions",
            samples.len(),
            preds.len()
        )));
    }
    let rows = par::map_indices(samples.len(), |i| {
        let s = &samples[i];
        let p = Plane::from_tensor(&preds[i])?;
        let g = Plane::from_tensor(&s.mask)?;
        evaluate_sample(&s.id, &p, &g).map_err(|e| Error::Data(format!("sample {}: {e}", s.id)))
    });
    Ok(MetricReport {
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}

/// Run `model` on every sample (at the sample's own extent) and evaluate.
/// Returns the report and the probability maps (`[1, H, W]`).
pub fn evaluate_model(model: &CaraNet<f32>, samples: &[Sample]) -> Result<(MetricReport, Vec<Tensor<f32>>)> {
    let preds = samples
        .iter()
        .map(|s| {
            let (h, w) = s.extent();
            let x = s.image.clone().reshape(&[1, 3, h, w])?;
            model.predict(&x)?.reshape(&[1, h, w])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((evaluate_predictions(samples, &preds)?, preds))
}

/// Evaluate a folder of `<id>.pgm` probability maps against `split` of the
/// manifest. Every failing sample is listed in the error.
pub fn evaluate_folder(dir: impl AsRef<Path>, manifest: &Manifest, split: Split) -> Result<MetricReport> {
    let samples = manifest.load(split)?;
    let mut preds = Vec::with_capacity(samples.len());
    let mut failures = Vec::new();
    for s in &samples {
        match read_image(dir.as_ref().join(format!("{}.pgm", s.id))) {
            Ok(p) if p.shape()[1..] == s.mask.shape()[1..] => preds.push(p),
            Ok(p) => failures.push(format!("{}: prediction extent {:?} vs mask {:?}", s.id, p.shape(), s.mask.shape())),
            Err(e) => failures.push(format!("{}: {e}", s.id)),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Data(failures.join("\n")));
    }
    evaluate_predictions(&samples, &preds)
}
