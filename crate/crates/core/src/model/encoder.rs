use rand::Rng;

use super::layers::{Block, Conv, ConvSpec, Res2Block};
use super::params::{Binder, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Real, Var};

/// Splits per Res2Net block.
pub const RES2_SCALE: usize = 4;

/// Five feature levels; level `i` (1-based) has extent `(h/2^(i-1), w/2^(i-1))`.
pub struct EncoderFeatures<'t, T: Real> {
    pub levels: [Var<'t, T>; 5],
}

impl<'t, T: Real> EncoderFeatures<'t, T> {
    /// Feature map at 1-based `level`.
    pub fn f(&self, level: usize) -> Var<'t, T> {
        self.levels[level - 1]
    }
}

/// Channel width of each level for a given multiplier.
pub fn encoder_widths(base: usize) -> [usize; 5] {
    [base, base, 2 * base, 4 * base, 8 * base]
}

#[derive(Clone, Debug)]
pub struct Encoder {
    entry: Vec<Conv>,
    blocks: Vec<Res2Block>,
}

impl Encoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, base: usize) -> Result<Self> {
        let widths = encoder_widths(base);
        let mut entry = Vec::with_capacity(5);
        let mut blocks = Vec::with_capacity(5);
        let mut cin = 3;
        for (i, &c) in widths.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            let name = format!("encoder.level{}", i + 1);
            entry.push(Conv::new(store, rng, &format!("{name}.entry"), ConvSpec::new(cin, c, 3).stride(stride))?);
            blocks.push(Res2Block::new(store, rng, &format!("{name}.block"), c, RES2_SCALE)?);
            cin = c;
        }
        Ok(Encoder { entry, blocks })
    }

    pub fn forward<'t, T: Real>(&self, b: &Binder<'t, T>, image: Var<'t, T>) -> Result<EncoderFeatures<'t, T>> {
        let shape = image.shape();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::shape(format!("encoder expects N x 3 x H x W, got {shape:?}")));
        }
        if shape[2] % 16 != 0 || shape[3] % 16 != 0 || shape[2] == 0 || shape[3] == 0 {
            return Err(Error::shape(format!(
                "input extent {}x{} is not a positive multiple of 16",
                shape[2], shape[3]
            )));
        }
        let mut x = image;
        let mut out = Vec::with_capacity(5);
        for (conv, block) in self.entry.iter().zip(&self.blocks) {
            x = conv.forward(b, x)?.relu()?;
            x = block.forward(b, x)?;
            out.push(x);
        }
        Ok(EncoderFeatures {
            levels: [out[0], out[1], out[2], out[3], out[4]],
        })
    }
}
