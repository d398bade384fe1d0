use rand::Rng;

use super::layers::{Block, Conv, ConvSpec};
use super::params::{Binder, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Real, Var};

/// Number of parallel feature-pyramid channels.
pub const CFP_BRANCHES: usize = 4;

/// Dilation rate of each branch for the knob `d`.
pub fn cfp_rates(d: usize) -> [usize; CFP_BRANCHES] {
    [(d / 8).max(1), (d / 4).max(1), (d / 2).max(1), d.max(1)]
}

/// Channel-wise feature pyramid block. Shape preserving.
#[derive(Clone, Debug)]
pub struct Cfp {
    project: Conv,
    branches: Vec<[Conv; 3]>,
    merge: Conv,
    width: usize,
}

impl Cfp {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
        d: usize,
    ) -> Result<Self> {
        if channels == 0 || channels % CFP_BRANCHES != 0 {
            return Err(Error::invalid(format!(
                "CFP width {channels} is not divisible by {CFP_BRANCHES}"
            )));
        }
        let width = channels / CFP_BRANCHES;
        let project = Conv::new(store, rng, &format!("{name}.project"), ConvSpec::new(channels, channels, 1))?;
        let mut branches = Vec::with_capacity(CFP_BRANCHES);
        for (k, rate) in cfp_rates(d).into_iter().enumerate() {
            let mut conv = |j: usize| {
                Conv::new(
                    store,
                    rng,
                    &format!("{name}.fp{}.conv{j}", k + 1),
                    ConvSpec::new(width, width, 3).dilation(rate),
                )
            };
            branches.push([conv(1)?, conv(2)?, conv(3)?]);
        }
        let merge = Conv::new(store, rng, &format!("{name}.merge"), ConvSpec::new(channels, channels, 1))?;
        Ok(Cfp {
            project,
            branches,
            merge,
            width,
        })
    }
}

impl<T: Real> Block<T> for Cfp {
    fn forward<'t>(&self, b: &Binder<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let channels = x.shape().get(1).copied().unwrap_or(0);
        if channels != self.width * CFP_BRANCHES {
            return Err(Error::shape(format!(
                "CFP built for {} channels, got {channels}",
                self.width * CFP_BRANCHES
            )));
        }
        let p = self.project.forward(b, x)?.relu()?;
        let mut levels = Vec::with_capacity(CFP_BRANCHES);
        let mut level: Option<Var<'t, T>> = None;
        for (k, convs) in self.branches.iter().enumerate() {
            let chunk = p.narrow(1, k * self.width, self.width)?;
            let a1 = convs[0].forward(b, chunk)?.relu()?;
            let a2 = convs[1].forward(b, a1)?.relu()?;
            let a3 = convs[2].forward(b, a2)?.relu()?;
            let out = a1.add(a2)?.add(a3)?;
            let next = match level {
                Some(l) => l.add(out)?,
                None => out,
            };
            levels.push(next);
            level = Some(next);
        }
        let cat = Var::concat(&levels, 1)?;
        self.merge.forward(b, cat)?.add(x)
    }
}
