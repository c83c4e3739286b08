//! Region-based cross-covariance attention: region splitting, the attention
//! cores, and the attention blocks.

mod attend;
mod block;
mod region;

pub use attend::{head_scale, sa_attend, sa_weights, xca_attend, xca_covariance_map, xca_weights, NORM_EPS};
pub use block::{
    default_heads, ChannelTail, DenseSaBlock, DenseXcaBlock, MaxcaBlock, MaxcaConfig, Projection, SA_MAX_TOKENS,
    SE_REDUCTION,
};
pub use region::{from_tokens, region_merge, region_split, to_tokens, Axis, RegionView};
