use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::Block;
use super::params::{Binder, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// Gradient magnitude treated as "inside the footprint".
pub const FOOTPRINT_THRESHOLD: f64 = 1e-9;

/// Bounding box (height, width) of input positions that influence the centre
/// output unit of `block`, measured by one backward pass from that unit.
///
/// The input is seeded noise rather than zeros so that rectified units are
/// active. A footprint touching the border of the field is reported as
/// truncated.
pub fn receptive_field_probe(
    store: &ParamStore<f64>,
    block: &impl Block<f64>,
    extent: (usize, usize, usize),
    seed: u64,
) -> Result<(usize, usize)> {
    let (c, h, w) = extent;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::from_fn(&[1, c, h, w], |_| rng.gen_range(-1.0..1.0));
    let tape = Tape::new();
    let b = Binder::new(&tape, store, false);
    let x = tape.var(input);
    let y = block.forward(&b, x)?;
    let ys = y.shape();
    if ys.len() != 4 {
        return Err(Error::shape(format!("probe expects NCHW output, got {ys:?}")));
    }
    let (oh, ow) = (ys[2], ys[3]);
    let mut select = Tensor::zeros(&ys);
    select.data_mut()[(oh / 2) * ow + ow / 2] = 1.0;
    let g = y.mul(tape.constant(select))?.sum()?.backward()?;
    let grad = g
        .get(x)
        .ok_or_else(|| Error::Numerical("probe input received no gradient".into()))?;

    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                if grad.data()[(ch * h + i) * w + j].abs() > FOOTPRINT_THRESHOLD {
                    r0 = r0.min(i);
                    r1 = r1.max(i);
                    c0 = c0.min(j);
                    c1 = c1.max(j);
                }
            }
        }
    }
    if r0 == usize::MAX {
        return Ok((0, 0));
    }
    if r0 == 0 || c0 == 0 || r1 == h - 1 || c1 == w - 1 {
        return Err(Error::invalid(format!(
            "footprint reaches the border of the {h}x{w} field and may be truncated"
        )));
    }
    Ok((r1 - r0 + 1, c1 - c0 + 1))
}
