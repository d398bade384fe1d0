use rand::Rng;

use super::params::{Binder, ParamId, ParamStore};
use crate::error::Result;
use crate::tensor::{Real, Var};

/// Anything that maps one NCHW tensor to another on a tape.
pub trait Block<T: Real> {
    fn forward<'t>(&self, b: &Binder<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>>;
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
    pub dil: usize,
}

/// Convolution hyper-parameters; `pad` defaults to "same" for stride 1.
#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub dil: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(cin: usize, cout: usize, k: usize) -> Self {
        ConvSpec {
            cin,
            cout,
            kh: k,
            kw: k,
            stride: 1,
            dil: 1,
            bias: true,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dil = d;
        self
    }
}

impl Conv {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        spec: ConvSpec,
    ) -> Result<Self> {
        let fan_in = spec.cin * spec.kh * spec.kw;
        let w = store.register_uniform(
            format!("{name}.w"),
            &[spec.cout, spec.cin, spec.kh, spec.kw],
            fan_in,
            rng,
        )?;
        let b = if spec.bias {
            Some(store.register(format!("{name}.b"), crate::Tensor::zeros(&[spec.cout]))?)
        } else {
            None
        };
        Ok(Conv {
            w,
            b,
            stride: spec.stride,
            pad: spec.dil * (spec.kh - 1) / 2,
            dil: spec.dil,
        })
    }
}

impl<T: Real> Block<T> for Conv {
    fn forward<'t>(&self, b: &Binder<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.conv2d(b.get(self.w), self.b.map(|id| b.get(id)), self.stride, self.pad, self.dil)
    }
}

/// Res2Net-style bottleneck: 1x1 conv, split into `scale` groups that are
/// processed by chained 3x3 convs (each group also receives the previous
/// group's output), merge, 1x1 conv, identity residual.
#[derive(Clone, Debug)]
pub struct Res2Block {
    reduce: Conv,
    groups: Vec<Conv>,
    expand: Conv,
    width: usize,
}

impl Res2Block {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
        scale: usize,
    ) -> Result<Self> {
        let scale = if channels % scale == 0 { scale } else { 1 };
        let width = channels / scale;
        let reduce = Conv::new(store, rng, &format!("{name}.reduce"), ConvSpec::new(channels, channels, 1))?;
        let groups = (1..scale)
            .map(|g| Conv::new(store, rng, &format!("{name}.group{g}"), ConvSpec::new(width, width, 3)))
            .collect::<Result<Vec<_>>>()?;
        let expand = Conv::new(store, rng, &format!("{name}.expand"), ConvSpec::new(channels, channels, 1))?;
        Ok(Res2Block {
            reduce,
            groups,
            expand,
            width,
        })
    }
}

impl<T: Real> Block<T> for Res2Block {
    fn forward<'t>(&self, b: &Binder<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.reduce.forward(b, x)?.relu()?;
        let mut outs = vec![y.narrow(1, 0, self.width)?];
        let mut prev: Option<Var<'t, T>> = None;
        for (g, conv) in self.groups.iter().enumerate() {
            let part = y.narrow(1, (g + 1) * self.width, self.width)?;
            let input = match prev {
                Some(p) => part.add(p)?,
                None => part,
            };
            let out = conv.forward(b, input)?.relu()?;
            outs.push(out);
            prev = Some(out);
        }
        let merged = if outs.len() == 1 { outs[0] } else { Var::concat(&outs, 1)? };
        self.expand.forward(b, merged)?.add(x)?.relu()
    }
}
