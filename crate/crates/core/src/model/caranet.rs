use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::{match_extent, AraStage};
use super::cfp::{Cfp, CFP_BRANCHES};
use super::decoder::PartialDecoder;
use super::encoder::{encoder_widths, Encoder, EncoderFeatures};
use super::layers::{Block, Conv, ConvSpec};
use super::params::{Binder, ParamStore};
use crate::config::{self, Settings};
use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Real, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct CaraNetConfig {
    pub input_size: (usize, usize),
    pub base_channels: usize,
    pub decoder_channels: usize,
    pub cfp_channels: usize,
    pub cfp_rate: usize,
    pub use_cfp: bool,
    pub use_ara: bool,
    pub seed: u64,
}

impl Default for CaraNetConfig {
    fn default() -> Self {
        CaraNetConfig {
            input_size: (64, 64),
            base_channels: 4,
            decoder_channels: 4,
            cfp_channels: CFP_BRANCHES,
            cfp_rate: 8,
            use_cfp: true,
            use_ara: true,
            seed: 0,
        }
    }
}

impl CaraNetConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::invalid(format!(
                "input size {h}x{w} must be a positive multiple of 16"
            )));
        }
        if self.base_channels == 0 || self.decoder_channels == 0 {
            return Err(Error::invalid("channel widths must be positive"));
        }
        if self.cfp_channels != CFP_BRANCHES {
            return Err(Error::invalid(format!(
                "cfp_channels must be {CFP_BRANCHES}, got {}",
                self.cfp_channels
            )));
        }
        for m in &encoder_widths(self.base_channels)[2..] {
            if m % self.cfp_channels != 0 {
                return Err(Error::invalid(format!(
                    "CFP input width {m} is not divisible by {}",
                    self.cfp_channels
                )));
            }
        }
        Ok(())
    }

    /// Short name of the ablation variant.
    pub fn variant(&self) -> &'static str {
        match (self.use_cfp, self.use_ara) {
            (true, true) => "full",
            (true, false) => "cfp-only",
            (false, true) => "ara-only",
            (false, false) => "baseline",
        }
    }
}

/// Logit maps of one forward pass.
pub struct PredictionSet<'t, T: Real> {
    pub s_g: Var<'t, T>,
    pub s3: Var<'t, T>,
    pub s4: Var<'t, T>,
    pub s5: Var<'t, T>,
    pub final_map: Var<'t, T>,
}

impl<'t, T: Real> PredictionSet<'t, T> {
    /// All supervised outputs: S_g, S_5, S_4, S_3.
    pub fn side_outputs(&self) -> [Var<'t, T>; 4] {
        [self.s_g, self.s5, self.s4, self.s3]
    }
}

#[derive(Clone, Debug)]
enum Context {
    Cfp(Cfp),
    Projection(Conv),
}

#[derive(Clone, Debug)]
enum Stage {
    Ara(AraStage),
    Head(Conv),
}

/// Network structure. Parameters live in the accompanying [`ParamStore`].
#[derive(Clone, Debug)]
pub struct CaraNet<T: Real = f32> {
    pub config: CaraNetConfig,
    pub params: ParamStore<T>,
    encoder: Encoder,
    decoder: PartialDecoder,
    /// Levels 3, 4, 5.
    context: Vec<Context>,
    stages: Vec<Stage>,
}

impl<T: Real> CaraNet<T> {
    pub fn new(config: CaraNetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let widths = encoder_widths(config.base_channels);
        let encoder = Encoder::new(&mut params, &mut rng, config.base_channels)?;
        let decoder = PartialDecoder::new(
            &mut params,
            &mut rng,
            [widths[2], widths[3], widths[4]],
            config.decoder_channels,
        )?;
        let mut context = Vec::new();
        let mut stages = Vec::new();
        for level in 3..=5 {
            let m = widths[level - 1];
            context.push(if config.use_cfp {
                Context::Cfp(Cfp::new(&mut params, &mut rng, &format!("cfp{level}"), m, config.cfp_rate)?)
            } else {
                Context::Projection(Conv::new(
                    &mut params,
                    &mut rng,
                    &format!("project{level}"),
                    ConvSpec::new(m, m, 1),
                )?)
            });
            stages.push(if config.use_ara {
                Stage::Ara(AraStage::new(&mut params, &mut rng, &format!("ara{level}"), m)?)
            } else {
                Stage::Head(Conv::new(
                    &mut params,
                    &mut rng,
                    &format!("head{level}"),
                    ConvSpec::new(m, 1, 1),
                )?)
            });
        }
        Ok(CaraNet {
            config,
            params,
            encoder,
            decoder,
            context,
            stages,
        })
    }

    /// Same structure and weights in another precision.
    pub fn cast<U: Real>(&self) -> CaraNet<U> {
        CaraNet {
            config: self.config.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            context: self.context.clone(),
            stages: self.stages.clone(),
        }
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &PartialDecoder {
        &self.decoder
    }

    pub fn encode<'t>(&self, b: &Binder<'t, T>, image: Var<'t, T>) -> Result<EncoderFeatures<'t, T>> {
        self.encoder.forward(b, image)
    }

    /// Full forward pass. Input extents must be multiples of 16 but need not
    /// equal `config.input_size`.
    pub fn forward<'t>(&self, b: &Binder<'t, T>, image: Var<'t, T>) -> Result<PredictionSet<'t, T>> {
        let feats = self.encoder.forward(b, image)?;
        let s_g = self.decoder.forward(b, feats.f(3), feats.f(4), feats.f(5))?;

        let f5 = feats.f(5).shape();
        let pool = s_g.shape()[2] / f5[2];
        let mut prev = if pool > 1 { s_g.avg_pool2d(pool, pool, 0)? } else { s_g };
        let mut outs = [prev; 3];
        for level in (3..=5).rev() {
            let idx = level - 3;
            let f = feats.f(level);
            let ctx = match &self.context[idx] {
                Context::Cfp(c) => c.forward(b, f)?,
                Context::Projection(p) => p.forward(b, f)?,
            };
            let s = match &self.stages[idx] {
                Stage::Ara(stage) => stage.forward(b, ctx, prev)?.logits,
                Stage::Head(head) => {
                    let up = match_extent(prev, &ctx.shape())?;
                    head.forward(b, ctx)?.add(up)?
                }
            };
            outs[idx] = s;
            prev = s;
        }
        let shape = image.shape();
        let final_map = outs[0].upsample_to(shape[2], shape[3])?;
        Ok(PredictionSet {
            s_g,
            s3: outs[0],
            s4: outs[1],
            s5: outs[2],
            final_map,
        })
    }

    /// Probability map (sigmoid of the final logits) without recording
    /// gradients.
    pub fn predict(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let b = Binder::new(&tape, &self.params, false);
        let x = tape.constant(image.clone());
        let out = self.forward(&b, x)?;
        Ok(out.final_map.to_tensor().map(sigmoid))
    }
}

impl Settings for CaraNetConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "input_size" => self.input_size = config::parse_extent(key, v)?,
            "base_channels" => self.base_channels = config::parse(key, v)?,
            "decoder_channels" => self.decoder_channels = config::parse(key, v)?,
            "cfp_channels" => self.cfp_channels = config::parse(key, v)?,
            "cfp_rate" => self.cfp_rate = config::parse(key, v)?,
            "use_cfp" => self.use_cfp = config::parse_bool(key, v)?,
            "use_ara" => self.use_ara = config::parse_bool(key, v)?,
            "seed" => self.seed = config::parse(key, v)?,
            _ => return Err(config::unknown_key(key)),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("input_size", format!("{}x{}", self.input_size.0, self.input_size.1)),
            ("base_channels", self.base_channels.to_string()),
            ("decoder_channels", self.decoder_channels.to_string()),
            ("cfp_channels", self.cfp_channels.to_string()),
            ("cfp_rate", self.cfp_rate.to_string()),
            ("use_cfp", self.use_cfp.to_string()),
            ("use_ara", self.use_ara.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}
