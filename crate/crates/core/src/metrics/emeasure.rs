//! Enhanced alignment measure, maximized over 256 thresholds.

const LEVELS: usize = 256;

/// Alignment score of one binary foreground map against `gt`, averaged over
/// all pixels. Counts: `n11` (fm & gt), `n10` (fm & !gt), `n01`, `n00`.
fn enhanced(n11: usize, n10: usize, n01: usize, n00: usize) -> f64 {
    let n = (n11 + n10 + n01 + n00) as f64;
    let n_gt = (n11 + n01) as f64;
    let n_fm = (n11 + n10) as f64;
    if n_gt == 0.0 {
        return (n01 + n00) as f64 / n;
    }
    if n_gt == n {
        return n_fm / n;
    }
    let mu_fm = n_fm / n;
    let mu_gt = n_gt / n;
    let phi = |fm: f64, g: f64| {
        let a_fm = fm - mu_fm;
        let a_gt = g - mu_gt;
        let align = 2.0 * (a_gt * a_fm) / (a_gt * a_gt + a_fm * a_fm + f64::EPSILON);
        (align + 1.0) * (align + 1.0) / 4.0
    };
    (n11 as f64 * phi(1.0, 1.0)
        + n10 as f64 * phi(1.0, 0.0)
        + n01 as f64 * phi(0.0, 1.0)
        + n00 as f64 * phi(0.0, 0.0))
        / n
}

/// Largest `k` in `0..LEVELS` with `p >= k / 255`.
fn level(p: f64) -> usize {
    let top = (LEVELS - 1) as f64;
    let mut k = (p * top).floor().clamp(0.0, top) as usize;
    while k + 1 < LEVELS && p >= (k + 1) as f64 / top {
        k += 1;
    }
    while k > 0 && p < k as f64 / top {
        k -= 1;
    }
    k
}

pub(super) fn e_phi_max_plane(pred: &[f64], gt: &[bool]) -> f64 {
    // hist[k]: pixels whose highest passed threshold is k, split by gt.
    let mut hist = [[0usize; 2]; LEVELS];
    for (&p, &g) in pred.iter().zip(gt) {
        hist[level(p)][g as usize] += 1;
    }
    let total_fg = gt.iter().filter(|&&g| g).count();
    let total_bg = gt.len() - total_fg;
    let (mut above_fg, mut above_bg) = (0usize, 0usize);
    let mut best = f64::NEG_INFINITY;
    for k in (0..LEVELS).rev() {
        above_fg += hist[k][1];
        above_bg += hist[k][0];
        let e = enhanced(above_fg, above_bg, total_fg - above_fg, total_bg - above_bg);
        best = best.max(e);
    }
    best
}

/// Alignment score at a single threshold (`pred >= tau`).
pub(super) fn e_phi_at(pred: &[f64], gt: &[bool], tau: f64) -> f64 {
    let mut c = [[0usize; 2]; 2];
    for (&p, &g) in pred.iter().zip(gt) {
        c[(p >= tau) as usize][g as usize] += 1;
    }
    enhanced(c[1][1], c[1][0], c[0][1], c[0][0])
}
