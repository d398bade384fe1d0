//! Structure measure: object-aware plus region-aware similarity.

const ALPHA: f64 = 0.5;
const EPS: f64 = f64::EPSILON;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn object(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let x = mean(values);
    2.0 * x / (x * x + 1.0 + std_dev(values) + EPS)
}

fn s_object(pred: &[f64], gt: &[bool]) -> f64 {
    let fg: Vec<f64> = pred.iter().zip(gt).filter(|(_, &g)| g).map(|(&p, _)| p).collect();
    let bg: Vec<f64> = pred.iter().zip(gt).filter(|(_, &g)| !g).map(|(&p, _)| 1.0 - p).collect();
    let u = fg.len() as f64 / gt.len() as f64;
    u * object(&fg) + (1.0 - u) * object(&bg)
}

fn ssim(pred: &[f64], gt: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let n = pred.len() as f64;
    let x = mean(pred);
    let y = mean(gt);
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxy = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        sx += (p - x) * (p - x);
        sy += (g - y) * (g - y);
        sxy += (p - x) * (g - y);
    }
    let sx = sx / (n - 1.0 + EPS);
    let sy = sy / (n - 1.0 + EPS);
    let sxy = sxy / (n - 1.0 + EPS);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// 1-based centroid (column, row), rounded half away from zero.
fn centroid(gt: &[bool], h: usize, w: usize) -> (usize, usize) {
    let total = gt.iter().filter(|&&g| g).count();
    if total == 0 {
        return ((w as f64 / 2.0).round() as usize, (h as f64 / 2.0).round() as usize);
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if gt[y * w + x] {
                sx += (x + 1) as f64;
                sy += (y + 1) as f64;
            }
        }
    }
    ((sx / total as f64).round() as usize, (sy / total as f64).round() as usize)
}

fn block(v: &[f64], w: usize, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Vec<f64> {
    rows.flat_map(|r| v[r * w + cols.start..r * w + cols.end].to_vec()).collect()
}

fn s_region(pred: &[f64], gt: &[bool], h: usize, w: usize) -> f64 {
    let (cx, cy) = centroid(gt, h, w);
    let g: Vec<f64> = gt.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let area = (h * w) as f64;
    let w1 = (cx * cy) as f64 / area;
    let w2 = ((w - cx) * cy) as f64 / area;
    let w3 = (cx * (h - cy)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    let quads = [
        (0..cy, 0..cx, w1),
        (0..cy, cx..w, w2),
        (cy..h, 0..cx, w3),
        (cy..h, cx..w, w4),
    ];
    quads
        .into_iter()
        .map(|(rows, cols, weight)| {
            let p = block(pred, w, rows.clone(), cols.clone());
            let q = block(&g, w, rows, cols);
            weight * ssim(&p, &q)
        })
        .sum()
}

pub(super) fn s_alpha_plane(pred: &[f64], gt: &[bool], h: usize, w: usize) -> f64 {
    let y = gt.iter().filter(|&&g| g).count() as f64 / gt.len() as f64;
    if y == 0.0 {
        return 1.0 - mean(pred);
    }
    if y == 1.0 {
        return mean(pred);
    }
    let q = ALPHA * s_object(pred, gt) + (1.0 - ALPHA) * s_region(pred, gt, h, w);
    q.max(0.0)
}
