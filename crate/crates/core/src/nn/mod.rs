//! Layer primitives: convolution, normalization, activations, channel
//! attention, patch merging, upsampling and the ADAM optimizer.

mod activation;
mod adam;
mod conv;
mod merge;
mod norm;
mod params;
mod se;
mod upsample;

pub use activation::{leaky_relu, relu, sigmoid};
pub use adam::{adam_step, AdamState};
pub use conv::{conv3d, Conv3d};
pub use merge::{patch_merging, space_to_depth, PatchMerging};
pub use norm::{instance_norm, layer_norm, Norm3d, NormKind};
pub use params::{normal, uniform_fan_in, ParamId, ParamStore, Params};
pub use se::{channel_scale, global_avg_pool, se_channel_attention, SqueezeExcite};
pub use upsample::{upsample2x, upsample_trilinear, UpsampleMode};

/// Negative slope of every LeakyReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.2;
