//! The two-branch block, its channel-attention tail, and the dense reference
//! blocks used for ablations and benchmarks.

use rand::Rng;

use super::attend::{sa_attend, xca_attend};
use super::region::{from_tokens, to_tokens, Axis, RegionView};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{leaky_relu, Conv3d, Norm3d, NormKind, ParamId, ParamStore, Params, SqueezeExcite, LEAKY_SLOPE};
use crate::ops::{add, concat, narrow, permute, reshape};
use crate::tensor::{Element, Tensor};

/// Spatial kernel of the query/key/value projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    /// 3x3x3 convolution.
    Conv3,
    /// 1x1x1 convolution (pure channel mixing).
    Linear,
}

/// Squeeze-excitation reduction in every channel-attention tail.
pub const SE_REDUCTION: usize = 4;

/// Largest token count a dense self-attention block accepts by default.
pub const SA_MAX_TOKENS: usize = 16 * 16 * 16;

/// Heads such that each processes about 12 channels.
pub fn default_heads(channels: usize) -> usize {
    ((channels as f64 / 12.0).round() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxcaConfig {
    pub channels: usize,
    pub heads: usize,
    pub region: usize,
    pub use_local: bool,
    pub use_global: bool,
    pub projection: Projection,
    /// Learnable per-head temperature; fixed at 1 otherwise.
    pub learnable_tau: bool,
    /// Layer norm on the block input before the expansion.
    pub pre_norm: bool,
}

impl MaxcaConfig {
    pub fn new(channels: usize, heads: usize, region: usize) -> Self {
        MaxcaConfig {
            channels,
            heads,
            region,
            use_local: true,
            use_global: true,
            projection: Projection::Conv3,
            learnable_tau: true,
            pre_norm: false,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    /// Active branches in concatenation order.
    pub fn branches(&self) -> Vec<Axis> {
        let mut b = Vec::with_capacity(2);
        if self.use_local {
            b.push(Axis::Local);
        }
        if self.use_global {
            b.push(Axis::Global);
        }
        b
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "channels {} must be a positive multiple of heads {}",
                self.channels, self.heads
            )));
        }
        if self.region == 0 {
            return Err(Error::Config("region size must be at least 1".into()));
        }
        if !self.use_local && !self.use_global {
            return Err(Error::Config("at least one attention branch must be enabled".into()));
        }
        Ok(())
    }

    /// Checks a `[C][H][W][D]` input against the channel count and region size.
    pub fn check_input(&self, shape: &[usize]) -> Result<RegionView> {
        let view = RegionView::new(shape, self.region)?;
        if view.channels != self.channels {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("block expects {} channels", self.channels),
            });
        }
        Ok(view)
    }
}

/// `x + SE(conv3(lrelu(conv3(LN(x)))))`.
#[derive(Debug, Clone)]
pub struct ChannelTail {
    pub norm: Norm3d,
    pub conv1: Conv3d,
    pub conv2: Conv3d,
    pub se: SqueezeExcite,
}

impl ChannelTail {
    pub fn new<T: Element>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, channels: usize) -> Result<Self> {
        Ok(ChannelTail {
            norm: Norm3d::new(store, &format!("{name}.norm"), NormKind::Layer, channels),
            conv1: Conv3d::same(store, rng, &format!("{name}.conv1"), channels, channels, 3, true),
            conv2: Conv3d::same(store, rng, &format!("{name}.conv2"), channels, channels, 3, true),
            se: SqueezeExcite::new(store, rng, &format!("{name}.se"), channels, SE_REDUCTION)?,
        })
    }

    pub fn forward<T: Element>(&self, p: &Params<T>, x: &Var<T>) -> Result<Var<T>> {
        let y = self.norm.forward(p, x)?;
        let y = self.conv1.forward(p, &y)?;
        let y = leaky_relu(&y, T::of(LEAKY_SLOPE))?;
        let y = self.conv2.forward(p, &y)?;
        let y = self.se.forward(p, &y)?;
        add(x, &y)
    }
}

fn temperature<T: Element>(p: &Params<T>, id: Option<ParamId>, heads: usize) -> Var<T> {
    match id {
        Some(id) => p.get(id).clone(),
        None => Var::constant(Tensor::ones(&[heads])),
    }
}

fn add_tau<T: Element>(store: &mut ParamStore<T>, name: String, heads: usize, learnable: bool) -> Option<ParamId> {
    learnable.then(|| store.add(name, Tensor::ones(&[heads])))
}

/// Splits `[3][B][N][d]` into query, key and value `[B][N][d]`.
fn unpack<T: Element>(qkv: &Var<T>) -> Result<[Var<T>; 3]> {
    let s = qkv.shape()[1..].to_vec();
    let part = |i| narrow(qkv, 0, i, 1).and_then(|t| reshape(&t, &s));
    Ok([part(0)?, part(1)?, part(2)?])
}

#[derive(Debug, Clone)]
pub struct MaxcaBlock {
    pub cfg: MaxcaConfig,
    pub pre_norm: Option<Norm3d>,
    pub expand: Conv3d,
    pub qkv: Vec<Conv3d>,
    pub tau: Vec<Option<ParamId>>,
    pub reduce: Conv3d,
    pub tail: ChannelTail,
}

impl MaxcaBlock {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        cfg: &MaxcaConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let branches = cfg.branches();
        let nb = branches.len();
        let kernel = match cfg.projection {
            Projection::Conv3 => 3,
            Projection::Linear => 1,
        };
        let pre_norm = cfg
            .pre_norm
            .then(|| Norm3d::new(store, &format!("{name}.pre_norm"), NormKind::Layer, c));
        let expand = Conv3d::same(store, rng, &format!("{name}.expand"), c, nb * c, 1, true);
        let mut qkv = Vec::with_capacity(nb);
        let mut tau = Vec::with_capacity(nb);
        for axis in &branches {
            let tag = match axis {
                Axis::Local => "local",
                Axis::Global => "global",
            };
            qkv.push(Conv3d::same(
                store,
                rng,
                &format!("{name}.{tag}.qkv"),
                c,
                3 * c,
                kernel,
                true,
            ));
            tau.push(add_tau(
                store,
                format!("{name}.{tag}.tau"),
                cfg.heads,
                cfg.learnable_tau,
            ));
        }
        let reduce = Conv3d::same(store, rng, &format!("{name}.reduce"), nb * c, c, 1, true);
        let tail = ChannelTail::new(store, rng, &format!("{name}.tail"), c)?;
        Ok(MaxcaBlock {
            cfg: cfg.clone(),
            pre_norm,
            expand,
            qkv,
            tau,
            reduce,
            tail,
        })
    }

    /// Attention output of each active branch, merged back to `[C][H][W][D]`.
    pub fn branch_outputs<T: Element>(&self, p: &Params<T>, x: &Var<T>) -> Result<Vec<Var<T>>> {
        let view = self.cfg.check_input(x.shape())?;
        let c = self.cfg.channels;
        let h = self.cfg.heads;
        let normed;
        let input = match &self.pre_norm {
            Some(n) => {
                normed = n.forward(p, x)?;
                &normed
            }
            None => x,
        };
        let expanded = self.expand.forward(p, input)?;
        let mut outs = Vec::with_capacity(self.qkv.len());
        for (b, axis) in self.cfg.branches().into_iter().enumerate() {
            let f = narrow(&expanded, 0, b * c, c)?;
            let qkv = self.qkv[b].forward(p, &f)?;
            let tokens = to_tokens(&qkv, &view, h, axis)?;
            drop(qkv);
            let [q, k, v] = unpack(&tokens)?;
            drop(tokens);
            let y = xca_attend(&q, &k, &v, &temperature(p, self.tau[b], h))?;
            let s = y.shape().to_vec();
            let y = reshape(&y, &[1, s[0], s[1], s[2]])?;
            outs.push(from_tokens(&y, &view, h, axis)?);
        }
        Ok(outs)
    }

    /// Block output before the channel-attention tail.
    pub fn attention<T: Element>(&self, p: &Params<T>, x: &Var<T>) -> Result<Var<T>> {
        let outs = self.branch_outputs(p, x)?;
        let joined = if outs.len() == 1 {
            outs.into_iter().next().unwrap()
        } else {
            concat(&outs.iter().collect::<Vec<_>>(), 0)?
        };
        add(x, &self.reduce.forward(p, &joined)?)
    }

    pub fn forward<T: Element>(&self, p: &Params<T>, x: &Var<T>) -> Result<Var<T>> {
        let y = self.attention(p, x)?;
        self.tail.forward(p, &y)
    }
}

/// `[3C][H][W][D]` to query, key, value `[h][HWD][d]`.
fn dense_tokens<T: Element>(qkv: &Var<T>, heads: usize) -> Result<[Var<T>; 3]> {
    let s = qkv.shape();
    let c = s[0] / 3;
    let n: usize = s[1..].iter().product();
    let t = reshape(qkv, &[3, heads, c / heads, n])?;
    unpack(&permute(&t, &[0, 1, 3, 2])?)
}

/// `[h][HWD][d]` back to `[C][H][W][D]`.
fn dense_merge<T: Element>(y: &Var<T>, spatial: &[usize]) -> Result<Var<T>> {
    let t = permute(y, &[0, 2, 1])?;
    let c = t.shape()[0] * t.shape()[1];
    reshape(&t, &[c, spatial[0], spatial[1], spatial[2]])
}

fn check_channels(shape: &[usize], channels: usize) -> Result<()> {
    if shape.len() != 4 || shape[0] != channels {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: format!("block expects [{channels}][H][W][D]"),
        });
    }
    Ok(())
}

/// Cross-covariance attention over every voxel at once, no regions.
#[derive(Debug, Clone)]
pub struct DenseXcaBlock {
    pub channels: usize,
    pub heads: usize,
    pub qkv: Conv3d,
    pub tau: Option<ParamId>,
    pub proj: Conv3d,
    pub tail: ChannelTail,
}

impl DenseXcaBlock {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
        heads: usize,
        learnable_tau: bool,
    ) -> Result<Self> {
        MaxcaConfig::new(channels, heads, 1).validate()?;
        Ok(DenseXcaBlock {
            channels,
            heads,
            qkv: Conv3d::same(store, rng, &format!("{name}.qkv"), channels, 3 * channels, 1, true),
            tau: add_tau(store, format!("{name}.tau"), heads, learnable_tau),
            proj: Conv3d::same(store, rng, &format!("{name}.proj"), channels, channels, 1, true),
            tail: ChannelTail::new(store, rng, &format!("{name}.tail"), channels)?,
        })
    }

    pub fn forward<T: Element>(&self, p: &Params<T>, x: &Var<T>) -> Result<Var<T>> {
        check_channels(x.shape(), self.channels)?;
        let [q, k, v] = dense_tokens(&self.qkv.forward(p, x)?, self.heads)?;
        let y = xca_attend(&q, &k, &v, &temperature(p, self.tau, self.heads))?;
        let y = dense_merge(&y, &x.shape()[1..])?;
        let y = add(x, &self.proj.forward(p, &y)?)?;
        self.tail.forward(p, &y)
    }
}

/// Token-to-token self-attention over every voxel; its `N x N` map per head
/// is the quadratic cost the region design avoids.
#[derive(Debug, Clone)]
pub struct DenseSaBlock {
    pub channels: usize,
    pub heads: usize,
    pub allow_large: bool,
    pub qkv: Conv3d,
    pub proj: Conv3d,
    pub tail: ChannelTail,
}

impl DenseSaBlock {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
        heads: usize,
        allow_large: bool,
    ) -> Result<Self> {
        MaxcaConfig::new(channels, heads, 1).validate()?;
        Ok(DenseSaBlock {
            channels,
            heads,
            allow_large,
            qkv: Conv3d::same(store, rng, &format!("{name}.qkv"), channels, 3 * channels, 1, true),
            proj: Conv3d::same(store, rng, &format!("{name}.proj"), channels, channels, 1, true),
            tail: ChannelTail::new(store, rng, &format!("{name}.tail"), channels)?,
        })
    }

    /// Errors when `shape` has more voxels than the guard allows.
    pub fn check_resolution(&self, shape: &[usize]) -> Result<()> {
        let n: usize = shape[1..].iter().product();
        if n > SA_MAX_TOKENS && !self.allow_large {
            return Err(Error::Config(format!(
                "dense self-attention over {n} voxels exceeds the {SA_MAX_TOKENS}-voxel guard"
            )));
        }
        Ok(())
    }

    pub fn forward<T: Element>(&self, p: &Params<T>, x: &Var<T>) -> Result<Var<T>> {
        check_channels(x.shape(), self.channels)?;
        self.check_resolution(x.shape())?;
        let [q, k, v] = dense_tokens(&self.qkv.forward(p, x)?, self.heads)?;
        let y = sa_attend(&q, &k, &v)?;
        let y = dense_merge(&y, &x.shape()[1..])?;
        let y = add(x, &self.proj.forward(p, &y)?)?;
        self.tail.forward(p, &y)
    }
}
