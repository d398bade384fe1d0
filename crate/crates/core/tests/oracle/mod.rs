//! Literal per-pixel transcriptions of the published reference evaluation
//! code: brute-force nearest-foreground search and direct per-threshold
//! loops, independent of the library internals.

const EPS: f64 = f64::EPSILON;

fn mean2(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn wfb(fg: &[f64], gt: &[bool], h: usize, w: usize) -> f64 {
    if !gt.iter().any(|&g| g) {
        return if mean2(fg) < 1e-6 { 1.0 } else { 0.0 };
    }
    let n = h * w;
    let e: Vec<f64> = (0..n).map(|i| (fg[i] - if gt[i] { 1.0 } else { 0.0 }).abs()).collect();
    // bwdist: nearest foreground, first in row-major order on ties.
    let mut dst = vec![0.0; n];
    let mut idx = vec![0usize; n];
    for p in 0..n {
        let mut best = f64::INFINITY;
        for q in 0..n {
            if gt[q] {
                let dy = (p / w) as f64 - (q / w) as f64;
                let dx = (p % w) as f64 - (q % w) as f64;
                let d = (dy * dy + dx * dx).sqrt();
                if d < best {
                    best = d;
                    idx[p] = q;
                }
            }
        }
        dst[p] = best;
    }
    let mut et = e.clone();
    for p in 0..n {
        if !gt[p] {
            et[p] = e[idx[p]];
        }
    }
    // fspecial('gaussian', 7, 5)
    let mut k = [[0.0f64; 7]; 7];
    let mut ksum = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (y, x) = (i as f64 - 3.0, j as f64 - 3.0);
            *v = (-(x * x + y * y) / (2.0 * 5.0 * 5.0)).exp();
            ksum += *v;
        }
    }
    // imfilter, zero padding, same size.
    let mut ea = vec![0.0; n];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = 0.0;
            for i in 0..7i64 {
                for j in 0..7i64 {
                    let (sy, sx) = (y + i - 3, x + j - 3);
                    if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                        acc += k[i as usize][j as usize] / ksum * et[(sy * w as i64 + sx) as usize];
                    }
                }
            }
            ea[(y * w as i64 + x) as usize] = acc;
        }
    }
    let mut min_e_ea = e.clone();
    for p in 0..n {
        if gt[p] && ea[p] < e[p] {
            min_e_ea[p] = ea[p];
        }
    }
    let mut b = vec![1.0; n];
    for p in 0..n {
        if !gt[p] {
            b[p] = 2.0 - 1.0 * ((1.0f64 - 0.5).ln() / 5.0 * dst[p]).exp();
        }
    }
    let ew: Vec<f64> = (0..n).map(|p| min_e_ea[p] * b[p]).collect();
    let n_gt = gt.iter().filter(|&&g| g).count() as f64;
    let ew_gt: Vec<f64> = (0..n).filter(|&p| gt[p]).map(|p| ew[p]).collect();
    let tpw = n_gt - ew_gt.iter().sum::<f64>();
    let fpw: f64 = (0..n).filter(|&p| !gt[p]).map(|p| ew[p]).sum();
    let r = 1.0 - mean2(&ew_gt);
    let p = tpw / (EPS + tpw + fpw);
    2.0 * (r * p) / (EPS + r + p)
}

fn std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean2(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

fn object(pred: &[f64], gt: &[bool]) -> f64 {
    let sel: Vec<f64> = pred.iter().zip(gt).filter(|(_, &g)| g).map(|(&p, _)| p).collect();
    if sel.is_empty() {
        return 0.0;
    }
    let x = mean2(&sel);
    2.0 * x / (x * x + 1.0 + std(&sel) + EPS)
}

fn ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    if pred.is_empty() {
        return 0.0;
    }
    let x = mean2(pred);
    let y = mean2(gt);
    let sx2 = pred.iter().map(|p| (p - x).powi(2)).sum::<f64>() / (n - 1.0 + EPS);
    let sy2 = gt.iter().map(|g| (g - y).powi(2)).sum::<f64>() / (n - 1.0 + EPS);
    let sxy = pred.iter().zip(gt).map(|(p, g)| (p - x) * (g - y)).sum::<f64>() / (n - 1.0 + EPS);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx2 + sy2);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if alpha == 0.0 && beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn smeasure(pred: &[f64], gt: &[bool], h: usize, w: usize) -> f64 {
    let gd: Vec<f64> = gt.iter().map(|&g| g as u8 as f64).collect();
    let y = mean2(&gd);
    if y == 0.0 {
        return 1.0 - mean2(pred);
    }
    if y == 1.0 {
        return mean2(pred);
    }
    // S_object
    let pred_fg: Vec<f64> = pred.iter().zip(gt).map(|(&p, &g)| if g { p } else { 0.0 }).collect();
    let o_fg = object(&pred_fg, gt);
    let pred_bg: Vec<f64> = pred.iter().zip(gt).map(|(&p, &g)| if g { 0.0 } else { 1.0 - p }).collect();
    let not_gt: Vec<bool> = gt.iter().map(|g| !g).collect();
    let o_bg = object(&pred_bg, &not_gt);
    let s_obj = y * o_fg + (1.0 - y) * o_bg;
    // centroid, 1-based, MATLAB round
    let total: f64 = gd.iter().sum();
    let mut col_sum = 0.0;
    let mut row_sum = 0.0;
    for r in 0..h {
        for c in 0..w {
            col_sum += gd[r * w + c] * (c + 1) as f64;
            row_sum += gd[r * w + c] * (r + 1) as f64;
        }
    }
    let xc = (col_sum / total).round() as usize;
    let yc = (row_sum / total).round() as usize;
    let area = (h * w) as f64;
    let w1 = (xc * yc) as f64 / area;
    let w2 = ((w - xc) * yc) as f64 / area;
    let w3 = (xc * (h - yc)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    let take = |v: &[f64], r0: usize, r1: usize, c0: usize, c1: usize| {
        let mut out = Vec::new();
        for r in r0..r1 {
            for c in c0..c1 {
                out.push(v[r * w + c]);
            }
        }
        out
    };
    let q1 = ssim(&take(pred, 0, yc, 0, xc), &take(&gd, 0, yc, 0, xc));
    let q2 = ssim(&take(pred, 0, yc, xc, w), &take(&gd, 0, yc, xc, w));
    let q3 = ssim(&take(pred, yc, h, 0, xc), &take(&gd, yc, h, 0, xc));
    let q4 = ssim(&take(pred, yc, h, xc, w), &take(&gd, yc, h, xc, w));
    let s_reg = w1 * q1 + w2 * q2 + w3 * q3 + w4 * q4;
    let q = 0.5 * s_obj + 0.5 * s_reg;
    q.max(0.0)
}

pub fn emeasure_at(fm: &[bool], gt: &[bool]) -> f64 {
    let n = fm.len() as f64;
    let dfm: Vec<f64> = fm.iter().map(|&b| b as u8 as f64).collect();
    let dgt: Vec<f64> = gt.iter().map(|&b| b as u8 as f64).collect();
    let enhanced: Vec<f64> = if dgt.iter().sum::<f64>() == 0.0 {
        dfm.iter().map(|f| 1.0 - f).collect()
    } else if dgt.iter().all(|&g| g == 1.0) {
        dfm.clone()
    } else {
        let mu_fm = mean2(&dfm);
        let mu_gt = mean2(&dgt);
        dfm.iter()
            .zip(&dgt)
            .map(|(f, g)| {
                let (af, ag) = (f - mu_fm, g - mu_gt);
                let align = 2.0 * (ag * af) / (ag * ag + af * af + EPS);
                (align + 1.0).powi(2) / 4.0
            })
            .collect()
    };
    enhanced.iter().sum::<f64>() / n
}

pub fn emeasure_max(pred: &[f64], gt: &[bool]) -> f64 {
    (0..256)
        .map(|k| {
            let t = k as f64 / 255.0;
            let fm: Vec<bool> = pred.iter().map(|&p| p >= t).collect();
            emeasure_at(&fm, gt)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}
