//! Registration network, spatial warping, and the unsupervised loss.

mod checkpoint;
mod config;
mod field;
mod loss;
mod net;
mod warp;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use config::{parse_key_values, BlockKind, LevelKind, NetConfig};
pub use field::{DisplacementField, LabelMap, Volume};
pub use loss::{diffusion_reg, ncc_loss, total_loss, LossConfig, LossTerms};
pub use net::{ConvBlock, LevelBlock, XcaMorph, HEAD_INIT_STD};
pub use warp::{warp, warp_labels, Boundary};
