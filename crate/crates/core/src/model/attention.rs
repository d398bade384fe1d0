use rand::Rng;

use super::layers::{Block, Conv, ConvSpec};
use super::params::{Binder, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Real, Var};

#[derive(Clone, Debug)]
struct AxisQkv {
    q: Conv,
    k: Conv,
    v: Conv,
}

/// Height-then-width axial self-attention with sigmoid weights.
#[derive(Clone, Debug)]
pub struct AxialAttention {
    height: AxisQkv,
    width: AxisQkv,
    channels: usize,
}

impl AxialAttention {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("axial attention needs at least one channel"));
        }
        let mut axis = |axis: &str| -> Result<AxisQkv> {
            let mut c = |p: &str| Conv::new(store, rng, &format!("{name}.{axis}.{p}"), ConvSpec::new(channels, channels, 1));
            Ok(AxisQkv {
                q: c("q")?,
                k: c("k")?,
                v: c("v")?,
            })
        };
        let height = axis("height")?;
        let width = axis("width")?;
        Ok(AxialAttention {
            height,
            width,
            channels,
        })
    }

    /// Attention along the height axis only.
    pub fn height_pass<'t, T: Real>(&self, b: &Binder<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.pass(b, &self.height, x, [0, 3, 2, 1], [0, 3, 1, 2], [0, 3, 2, 1])
    }

    fn width_pass<'t, T: Real>(&self, b: &Binder<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.pass(b, &self.width, x, [0, 2, 3, 1], [0, 2, 1, 3], [0, 3, 1, 2])
    }

    /// `seq` brings x to (N, other, L, C), `keys` to (N, other, C, L), `back`
    /// restores NCHW from the `seq` layout.
    fn pass<'t, T: Real>(
        &self,
        b: &Binder<'t, T>,
        qkv: &AxisQkv,
        x: Var<'t, T>,
        seq: [usize; 4],
        keys: [usize; 4],
        back: [usize; 4],
    ) -> Result<Var<'t, T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::shape(format!(
                "axial attention built for {} channels, got {s:?}",
                self.channels
            )));
        }
        let q = qkv.q.forward(b, x)?;
        let k = qkv.k.forward(b, x)?;
        let v = qkv.v.forward(b, x)?;
        let lay = [s[seq[0]], s[seq[1]], s[seq[2]], s[seq[3]]];
        let (batch, len, c) = (lay[0] * lay[1], lay[2], lay[3]);
        let q = q.permute(&seq)?.reshape(&[batch, len, c])?;
        let kt = k.permute(&keys)?.reshape(&[batch, c, len])?;
        let v = v.permute(&seq)?.reshape(&[batch, len, c])?;
        let weights = q.matmul(kt)?.scale(1.0 / (c as f64).sqrt())?.sigmoid()?;
        weights.matmul(v)?.reshape(&lay)?.permute(&back)
    }
}

impl<T: Real> Block<T> for AxialAttention {
    fn forward<'t>(&self, b: &Binder<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.height_pass(b, x)?;
        self.width_pass(b, h)
    }
}

/// `1 - sigmoid(s)`.
pub fn reverse_map<'t, T: Real>(s: Var<'t, T>) -> Result<Var<'t, T>> {
    s.sigmoid()?.scale(-1.0)?.add_scalar(1.0)
}

/// Output of one attention-reverse stage.
pub struct AraOutput<'t, T: Real> {
    pub attention: Var<'t, T>,
    pub reverse: Var<'t, T>,
    pub ara: Var<'t, T>,
    pub logits: Var<'t, T>,
}

/// Axial attention gated by the reverse of the coarser prediction, with a
/// 1x1 head refining that prediction residually.
#[derive(Clone, Debug)]
pub struct AraStage {
    pub attention: AxialAttention,
    head: Conv,
}

impl AraStage {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
    ) -> Result<Self> {
        let attention = AxialAttention::new(store, rng, &format!("{name}.attention"), channels)?;
        let head = Conv::new(store, rng, &format!("{name}.head"), ConvSpec::new(channels, 1, 1))?;
        Ok(AraStage { attention, head })
    }

    /// `s_prev` may be coarser than `feature`; it is upsampled to match.
    pub fn forward<'t, T: Real>(
        &self,
        b: &Binder<'t, T>,
        feature: Var<'t, T>,
        s_prev: Var<'t, T>,
    ) -> Result<AraOutput<'t, T>> {
        let fs = feature.shape();
        let prev = match_extent(s_prev, &fs)?;
        let attention = self.attention.forward(b, feature)?;
        let reverse = reverse_map(prev)?;
        let ara = attention.mul(reverse.expand_channels(fs[1])?)?;
        let logits = self.head.forward(b, ara)?.add(prev)?;
        Ok(AraOutput {
            attention,
            reverse,
            ara,
            logits,
        })
    }
}

/// Upsample a single-channel map to the spatial extent of `shape` (NCHW).
pub(crate) fn match_extent<'t, T: Real>(s: Var<'t, T>, shape: &[usize]) -> Result<Var<'t, T>> {
    let ss = s.shape();
    if ss.len() != 4 || ss[1] != 1 {
        return Err(Error::shape(format!("expected N x 1 x H x W logits, got {ss:?}")));
    }
    if ss[2] == shape[2] && ss[3] == shape[3] {
        return Ok(s);
    }
    if ss[2] > shape[2] || ss[3] > shape[3] {
        return Err(Error::shape(format!(
            "cannot upsample {}x{} to {}x{}",
            ss[2], ss[3], shape[2], shape[3]
        )));
    }
    s.upsample_to(shape[2], shape[3])
}
