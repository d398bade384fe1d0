//! CaraNet: a Res2Net-style encoder, a partial decoder producing a global
//! map, and three refinement stages combining channel-wise feature pyramids
//! with reverse-gated axial attention.

mod attention;
mod caranet;
mod cfp;
mod decoder;
mod encoder;
mod layers;
mod params;
mod probe;

pub use attention::{reverse_map, AraOutput, AraStage, AxialAttention};
pub use caranet::{CaraNet, CaraNetConfig, PredictionSet};
pub use cfp::{cfp_rates, Cfp, CFP_BRANCHES};
pub use decoder::PartialDecoder;
pub use encoder::{encoder_widths, Encoder, EncoderFeatures, RES2_SCALE};
pub use layers::{Block, Conv, ConvSpec, Res2Block};
pub use params::{Binder, ParamId, ParamStore, Parameter};
pub use probe::{receptive_field_probe, FOOTPRINT_THRESHOLD};
