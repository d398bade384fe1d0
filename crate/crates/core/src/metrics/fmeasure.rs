//! Weighted F-measure.

use super::edt::nearest_feature;

const BETA2: f64 = 1.0;
const KERNEL_SIGMA: f64 = 5.0;
const KERNEL_RADIUS: usize = 3;

/// Normalized 7x7 Gaussian.
fn gaussian_kernel() -> Vec<f64> {
    let n = 2 * KERNEL_RADIUS + 1;
    let r = KERNEL_RADIUS as f64;
    let mut k: Vec<f64> = (0..n * n)
        .map(|i| {
            let (y, x) = ((i / n) as f64 - r, (i % n) as f64 - r);
            (-(x * x + y * y) / (2.0 * KERNEL_SIGMA * KERNEL_SIGMA)).exp()
        })
        .collect();
    let max = k.iter().cloned().fold(0.0, f64::max);
    for v in k.iter_mut() {
        if *v < f64::EPSILON * max {
            *v = 0.0;
        }
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Same-size correlation with zero padding.
fn filter_same(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = KERNEL_RADIUS as isize;
    let n = 2 * KERNEL_RADIUS + 1;
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for xx in 0..w as isize {
            let mut acc = 0.0;
            for ky in -r..=r {
                let sy = y + ky;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in -r..=r {
                    let sx = xx + kx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    acc += k[((ky + r) as usize) * n + (kx + r) as usize] * x[sy as usize * w + sx as usize];
                }
            }
            out[y as usize * w + xx as usize] = acc;
        }
    }
    out
}

pub(super) fn f_beta_w_plane(pred: &[f64], gt: &[bool], h: usize, w: usize) -> f64 {
    let fg = gt.iter().filter(|&&g| g).count();
    if fg == 0 {
        let mean = pred.iter().sum::<f64>() / pred.len() as f64;
        return if mean < 1e-6 { 1.0 } else { 0.0 };
    }
    let err: Vec<f64> = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| (p - if g { 1.0 } else { 0.0 }).abs())
        .collect();
    let (dist, nearest) = nearest_feature(gt, h, w);
    let et: Vec<f64> = (0..h * w).map(|i| if gt[i] { err[i] } else { err[nearest[i]] }).collect();
    let ea = filter_same(&et, h, w, &gaussian_kernel());
    let alpha = (0.5f64).ln() / 5.0;
    let mut ew = vec![0.0; h * w];
    for i in 0..h * w {
        ew[i] = if gt[i] {
            if ea[i] < err[i] {
                ea[i]
            } else {
                err[i]
            }
        } else {
            err[i] * (2.0 - (alpha * dist[i]).exp())
        };
    }
    let (mut ew_fg, mut ew_bg) = (0.0, 0.0);
    for i in 0..h * w {
        if gt[i] {
            ew_fg += ew[i];
        } else {
            ew_bg += ew[i];
        }
    }
    let tp = fg as f64 - ew_fg;
    let recall = 1.0 - ew_fg / fg as f64;
    let precision = tp / (f64::EPSILON + tp + ew_bg);
    (1.0 + BETA2) * recall * precision / (f64::EPSILON + recall + BETA2 * precision)
}
