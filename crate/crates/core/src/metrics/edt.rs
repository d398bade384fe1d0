//! Exact Euclidean distance transform with nearest-feature lookup.

const INF: f64 = 1e20;

/// One-dimensional squared-distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let parabola = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s = parabola(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = parabola(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
}

/// Squared distance from every pixel to the nearest `true` pixel. All
/// entries are `INF`-scale when there is no feature.
pub fn squared_distance(feature: &[bool], h: usize, w: usize) -> Vec<f64> {
    let n = h.max(w);
    let (mut f, mut d) = (vec![0.0; n], vec![0.0; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    let mut grid: Vec<f64> = feature.iter().map(|&b| if b { 0.0 } else { INF }).collect();
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        edt_1d(&f[..h], &mut d[..h], &mut v[..h], &mut z[..h + 1]);
        for y in 0..h {
            grid[y * w + x] = d[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut d[..w], &mut v[..w], &mut z[..w + 1]);
        grid[y * w..(y + 1) * w].copy_from_slice(&d[..w]);
    }
    grid
}

/// Distance to and row-major index of the nearest feature pixel. Ties go to
/// the smallest index. `feature` must contain at least one `true`.
pub fn nearest_feature(feature: &[bool], h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let sq = squared_distance(feature, h, w);
    let mut idx = vec![0usize; h * w];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if feature[p] {
                idx[p] = p;
                continue;
            }
            let target = sq[p];
            let r = target.sqrt().ceil() as usize;
            let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
            let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
            let mut best = usize::MAX;
            'scan: for yy in y0..=y1 {
                let dy = yy as f64 - y as f64;
                for xx in x0..=x1 {
                    let q = yy * w + xx;
                    let dx = xx as f64 - x as f64;
                    if feature[q] && dy * dy + dx * dx == target {
                        best = q;
                        break 'scan;
                    }
                }
            }
            debug_assert!(best != usize::MAX);
            idx[p] = best;
        }
    }
    (sq.into_iter().map(f64::sqrt).collect(), idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_brute_force() {
        let (h, w) = (7, 9);
        let feature: Vec<bool> = (0..h * w).map(|i| (i * 37 + 11) % 17 == 0).collect();
        let (d, idx) = nearest_feature(&feature, h, w);
        for p in 0..h * w {
            let (py, px) = ((p / w) as f64, (p % w) as f64);
            let mut best = (f64::INFINITY, 0);
            for q in 0..h * w {
                if feature[q] {
                    let (qy, qx) = ((q / w) as f64, (q % w) as f64);
                    let dd = (py - qy).powi(2) + (px - qx).powi(2);
                    if dd < best.0 {
                        best = (dd, q);
                    }
                }
            }
            assert_eq!(d[p], best.0.sqrt());
            assert_eq!(idx[p], best.1);
        }
    }
}
