use rand::Rng;

use super::layers::{Block, Conv, ConvSpec};
use super::params::{Binder, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Real, Var};

/// Aggregates f3, f4, f5 into the global map S_g at f3's resolution.
///
/// Internal convs carry no bias so that all-zero features yield exactly the
/// head bias.
#[derive(Clone, Debug)]
pub struct PartialDecoder {
    reduce: [Conv; 3],
    up1: Conv,
    up2: Conv,
    up3: Conv,
    up4: Conv,
    up5: Conv,
    cat2: Conv,
    cat3: Conv,
    fuse: Conv,
    head: Conv,
}

impl PartialDecoder {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        in_channels: [usize; 3],
        cd: usize,
    ) -> Result<Self> {
        let mut conv = |name: &str, cin: usize, cout: usize, k: usize| {
            let mut spec = ConvSpec::new(cin, cout, k);
            spec.bias = false;
            Conv::new(store, rng, &format!("decoder.{name}"), spec)
        };
        let reduce = [
            conv("reduce3", in_channels[0], cd, 1)?,
            conv("reduce4", in_channels[1], cd, 1)?,
            conv("reduce5", in_channels[2], cd, 1)?,
        ];
        let up1 = conv("up1", cd, cd, 3)?;
        let up2 = conv("up2", cd, cd, 3)?;
        let up3 = conv("up3", cd, cd, 3)?;
        let up4 = conv("up4", cd, cd, 3)?;
        let up5 = conv("up5", 2 * cd, 2 * cd, 3)?;
        let cat2 = conv("cat2", 2 * cd, 2 * cd, 3)?;
        let cat3 = conv("cat3", 3 * cd, 3 * cd, 3)?;
        let fuse = conv("fuse", 3 * cd, 3 * cd, 3)?;
        let head = Conv::new(store, rng, "decoder.head", ConvSpec::new(3 * cd, 1, 1))?;
        Ok(PartialDecoder {
            reduce,
            up1,
            up2,
            up3,
            up4,
            up5,
            cat2,
            cat3,
            fuse,
            head,
        })
    }

    pub fn head_bias(&self) -> Option<super::ParamId> {
        self.head.b
    }

    pub fn forward<'t, T: Real>(
        &self,
        b: &Binder<'t, T>,
        f3: Var<'t, T>,
        f4: Var<'t, T>,
        f5: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let (s3, s4, s5) = (f3.shape(), f4.shape(), f5.shape());
        let ok = s3.len() == 4
            && s4.len() == 4
            && s5.len() == 4
            && s3[2] == 2 * s4[2]
            && s3[3] == 2 * s4[3]
            && s4[2] == 2 * s5[2]
            && s4[3] == 2 * s5[3];
        if !ok {
            return Err(Error::shape(format!(
                "partial decoder needs extents in ratio 4:2:1, got {s3:?} {s4:?} {s5:?}"
            )));
        }
        let r3 = self.reduce[0].forward(b, f3)?.relu()?;
        let r4 = self.reduce[1].forward(b, f4)?.relu()?;
        let r5 = self.reduce[2].forward(b, f5)?.relu()?;

        let r5_up = r5.upsample(2)?;
        let r5_up2 = r5_up.upsample(2)?;
        let x2_1 = self.up1.forward(b, r5_up)?.mul(r4)?;
        let x3_1 = self
            .up2
            .forward(b, r5_up2)?
            .mul(self.up3.forward(b, r4.upsample(2)?)?)?
            .mul(r3)?;

        let x2_2 = Var::concat(&[x2_1, self.up4.forward(b, r5_up)?], 1)?;
        let x2_2 = self.cat2.forward(b, x2_2)?.relu()?;
        let x3_2 = Var::concat(&[x3_1, self.up5.forward(b, x2_2.upsample(2)?)?], 1)?;
        let x3_2 = self.cat3.forward(b, x3_2)?.relu()?;
        let x = self.fuse.forward(b, x3_2)?.relu()?;
        self.head.forward(b, x)
    }
}
