//! FGR-Net model: a VGG-style encoder, a skip-connected reconstruction
//! decoder and an MLP classifier head on the pooled bottleneck.

mod checkpoint;
mod config;
mod net;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{ModelConfig, Preset};
pub use net::{argmax_rows, bind, check_image, classify_on, decode_on, encode_on, infer_on, Bound, Encoded};
pub use params::{param_count, FgrNetParams, ParamGroup, ParamSpec};
