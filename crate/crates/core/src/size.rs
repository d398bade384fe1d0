//! Object-size analysis: size ratios, performance averaged over equal-width
//! size intervals, curve differencing and the stability watershed.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::tensor::{Real, Tensor};

/// Default small-object cutoff.
pub const SMALL_CUTOFF: f64 = 0.05;

/// Foreground pixels over total pixels. An empty mask has ratio 0.
pub fn size_ratio<T: Real>(mask: &Tensor<T>) -> f64 {
    let fg = mask.data().iter().filter(|v| v.as_f64() >= 0.5).count();
    fg as f64 / mask.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct SizePoint {
    pub id: String,
    pub size_ratio: f64,
    pub dice: f64,
}

pub fn points_from_report(report: &MetricReport) -> Vec<SizePoint> {
    report
        .rows
        .iter()
        .map(|r| SizePoint {
            id: r.id.clone(),
            size_ratio: r.size_ratio,
            dice: r.dice,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub mean_dice: f64,
    pub count: usize,
}

/// Equal-width intervals over `[lo, hi]`. Empty intervals are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct SizeCurve {
    pub lo: f64,
    pub hi: f64,
    pub bins: Vec<Option<Interval>>,
    pub dropped: usize,
}

impl SizeCurve {
    pub fn n_intervals(&self) -> usize {
        self.bins.len()
    }

    pub fn edge(&self, i: usize) -> f64 {
        let n = self.bins.len() as f64;
        if i == self.bins.len() {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / n
        }
    }

    pub fn populated(&self) -> impl Iterator<Item = (usize, &Interval)> {
        self.bins.iter().enumerate().filter_map(|(i, b)| b.as_ref().map(|b| (i, b)))
    }

    /// `interval_lo,interval_hi,mean_dice,count` for populated intervals.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("interval_lo,interval_hi,mean_dice,count\n");
        for (_, b) in self.populated() {
            let _ = writeln!(s, "{},{},{},{}", b.lo, b.hi, b.mean_dice, b.count);
        }
        s
    }
}

/// Assign each point to interval `floor((r - lo) / width)` (the top edge
/// belongs to the last interval) and average Dice per interval. Points
/// outside `[lo, hi]` are counted in `dropped`.
pub fn interval_average(points: &[SizePoint], lo: f64, hi: f64, n_intervals: usize) -> Result<SizeCurve> {
    if n_intervals == 0 {
        return Err(Error::invalid("need at least one interval"));
    }
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!("interval range [{lo}, {hi}] is empty")));
    }
    let width = (hi - lo) / n_intervals as f64;
    let mut members: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_intervals];
    let mut dropped = 0;
    for p in points {
        let r = p.size_ratio;
        if !(r >= lo && r <= hi) {
            dropped += 1;
            continue;
        }
        let i = (((r - lo) / width).floor() as usize).min(n_intervals - 1);
        members[i].push((r, p.dice));
    }
    let mut curve = SizeCurve {
        lo,
        hi,
        bins: vec![None; n_intervals],
        dropped,
    };
    for (i, mut m) in members.into_iter().enumerate() {
        if m.is_empty() {
            continue;
        }
        // A fixed summation order makes the result independent of input order.
        m.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let sum: f64 = m.iter().map(|(_, d)| d).sum();
        curve.bins[i] = Some(Interval {
            lo: curve.edge(i),
            hi: curve.edge(i + 1),
            mean_dice: sum / m.len() as f64,
            count: m.len(),
        });
    }
    Ok(curve)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffRow {
    pub lo: f64,
    pub hi: f64,
    pub a: f64,
    pub b: f64,
    pub diff: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveComparison {
    pub rows: Vec<DiffRow>,
    /// Sum of positive differences.
    pub sum_positive: f64,
    /// Sum of negative differences.
    pub sum_negative: f64,
}

impl CurveComparison {
    /// `interval_lo,interval_hi,mean_dice_a,mean_dice_b,diff`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("interval_lo,interval_hi,mean_dice_a,mean_dice_b,diff\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.lo, r.hi, r.a, r.b, r.diff);
        }
        s
    }
}

/// Per-interval `a - b` over intervals populated in both curves.
pub fn compare_curves(a: &SizeCurve, b: &SizeCurve) -> Result<CurveComparison> {
    if a.lo != b.lo || a.hi != b.hi || a.bins.len() != b.bins.len() {
        return Err(Error::invalid(format!(
            "interval grids differ: [{}, {}]/{} vs [{}, {}]/{}",
            a.lo,
            a.hi,
            a.bins.len(),
            b.lo,
            b.hi,
            b.bins.len()
        )));
    }
    let mut rows = Vec::new();
    let (mut pos, mut neg) = (0.0, 0.0);
    for (x, y) in a.bins.iter().zip(&b.bins) {
        if let (Some(x), Some(y)) = (x, y) {
            let diff = x.mean_dice - y.mean_dice;
            if diff > 0.0 {
                pos += diff;
            } else {
                neg += diff;
            }
            rows.push(DiffRow {
                lo: x.lo,
                hi: x.hi,
                a: x.mean_dice,
                b: y.mean_dice,
                diff,
            });
        }
    }
    Ok(CurveComparison {
        rows,
        sum_positive: pos,
        sum_negative: neg,
    })
}

fn population_std(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Left edge of the first populated interval from which every rolling window
/// of `window` populated intervals has a Dice standard deviation below
/// `tol`. `None` when the curve never settles.
pub fn watershed(curve: &SizeCurve, window: usize, tol: f64) -> Result<Option<f64>> {
    let pts: Vec<&Interval> = curve.populated().map(|(_, b)| b).collect();
    if window == 0 {
        return Err(Error::invalid("watershed window must be positive"));
    }
    if pts.len() < window {
        return Err(Error::invalid(format!(
            "curve has {} populated intervals, window needs {window}",
            pts.len()
        )));
    }
    let dice: Vec<f64> = pts.iter().map(|b| b.mean_dice).collect();
    let stable: Vec<bool> = dice.windows(window).map(|w| population_std(w) < tol).collect();
    let mut start = stable.len();
    while start > 0 && stable[start - 1] {
        start -= 1;
    }
    Ok(if start == stable.len() { None } else { Some(pts[start].lo) })
}

/// Rows with `size_ratio <= cutoff`.
pub fn filter_small(report: &MetricReport, cutoff: f64) -> Result<MetricReport> {
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(Error::invalid(format!("cutoff {cutoff} not in (0, 1]")));
    }
    let rows: Vec<_> = report.rows.iter().filter(|r| r.size_ratio <= cutoff).cloned().collect();
    if rows.is_empty() {
        return Err(Error::Data(format!("no samples with size ratio <= {cutoff}")));
    }
    Ok(MetricReport { rows })
}
