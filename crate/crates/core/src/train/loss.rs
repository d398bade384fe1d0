use crate::error::{Error, Result};
use crate::model::PredictionSet;
use crate::tensor::{Real, Tensor, Var};

/// Side of the box filter in the boundary weight map.
pub const WEIGHT_WINDOW: usize = 31;
/// Boundary emphasis of the weight map.
pub const WEIGHT_GAIN: f64 = 5.0;

/// `1 + 5 |avg_pool31(G) - G|` with zero padding (the divisor is always
/// 31 * 31).
pub fn weight_map<T: Real>(g: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = g.dims4()?;
    if g.data().iter().any(|&v| v != T::zero() && v != T::one()) {
        return Err(Error::invalid("weight map needs a binary mask"));
    }
    let r = WEIGHT_WINDOW / 2;
    let div = (WEIGHT_WINDOW * WEIGHT_WINDOW) as f64;
    let mut out = Tensor::zeros(g.shape());
    let stride = w + 1;
    let mut sat = vec![0.0f64; (h + 1) * stride];
    for plane in 0..n * c {
        let src = &g.data()[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += src[y * w + x].as_f64();
                sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row;
            }
        }
        let dst = &mut out.data_mut()[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
            for x in 0..w {
                let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
                let s = sat[y1 * stride + x1] - sat[y0 * stride + x1] - sat[y1 * stride + x0] + sat[y0 * stride + x0];
                let gv = src[y * w + x].as_f64();
                dst[y * w + x] = T::from_f64(1.0 + WEIGHT_GAIN * (s / div - gv).abs());
            }
        }
    }
    Ok(out)
}

fn check<'t, T: Real>(logits: Var<'t, T>, g: Var<'t, T>, w: Var<'t, T>) -> Result<()> {
    let ls = logits.shape();
    if ls != g.shape() || ls != w.shape() {
        return Err(Error::shape(format!(
            "loss inputs differ: logits {ls:?}, mask {:?}, weights {:?}",
            g.shape(),
            w.shape()
        )));
    }
    if ls.is_empty() {
        return Err(Error::shape("loss needs a batched map"));
    }
    Ok(())
}

/// Weighted binary cross-entropy from logits, normalized by the weight sum
/// of each image and averaged over the batch.
pub fn weighted_bce<'t, T: Real>(logits: Var<'t, T>, g: Var<'t, T>, w: Var<'t, T>) -> Result<Var<'t, T>> {
    check(logits, g, w)?;
    let per = logits.bce_with_logits(g)?.mul(w)?.sum_per_sample()?;
    per.div(w.sum_per_sample()?)?.mean()
}

/// `1 - sum(w p g) / sum(w (p + g - p g))` per image, averaged over the
/// batch, with `p = sigmoid(logits)`.
pub fn weighted_iou<'t, T: Real>(logits: Var<'t, T>, g: Var<'t, T>, w: Var<'t, T>) -> Result<Var<'t, T>> {
    check(logits, g, w)?;
    let p = logits.sigmoid()?;
    let pg = p.mul(g)?;
    let inter = pg.mul(w)?.sum_per_sample()?;
    let union = p.add(g)?.sub(pg)?.mul(w)?.sum_per_sample()?.add_scalar(1e-12)?;
    inter.div(union)?.scale(-1.0)?.add_scalar(1.0)?.mean()
}

/// Weighted IoU plus weighted BCE.
pub fn structure_loss<'t, T: Real>(logits: Var<'t, T>, g: Var<'t, T>, w: Var<'t, T>) -> Result<Var<'t, T>> {
    weighted_iou(logits, g, w)?.add(weighted_bce(logits, g, w)?)
}

pub struct LossTerms<'t, T: Real> {
    pub total: Var<'t, T>,
    /// Terms for S_g, S_5, S_4, S_3.
    pub terms: [Var<'t, T>; 4],
}

/// Deep supervision: each side output is upsampled to the mask extent and
/// scored with [`structure_loss`]; the total is their sum.
pub fn total_loss<'t, T: Real>(preds: &PredictionSet<'t, T>, g: Var<'t, T>, w: Var<'t, T>) -> Result<LossTerms<'t, T>> {
    let gs = g.shape();
    if gs.len() != 4 {
        return Err(Error::shape(format!("mask must be N x 1 x H x W, got {gs:?}")));
    }
    let mut terms = Vec::with_capacity(4);
    for s in preds.side_outputs() {
        let ss = s.shape();
        let up = if ss[2..] == gs[2..] { s } else { s.upsample_to(gs[2], gs[3])? };
        terms.push(structure_loss(up, g, w)?);
    }
    let total = terms[0].add(terms[1])?.add(terms[2])?.add(terms[3])?;
    Ok(LossTerms {
        total,
        terms: [terms[0], terms[1], terms[2], terms[3]],
    })
}
