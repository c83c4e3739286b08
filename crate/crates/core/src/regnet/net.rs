//! The encoder-decoder network mapping an image pair to a displacement field.

use rand::Rng;

use super::config::{LevelKind, NetConfig};
use crate::autodiff::Var;
use crate::error::{shape_mismatch, Result};
use crate::maxca::{DenseSaBlock, DenseXcaBlock, MaxcaBlock};
use crate::nn::{
    leaky_relu, normal, upsample2x, Conv3d, Norm3d, NormKind, ParamStore, Params, PatchMerging, LEAKY_SLOPE,
};
use crate::ops::concat;
use crate::tensor::{Element, Tensor};

/// Two units of conv3 -> LeakyReLU -> instance norm.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub units: [(Conv3d, Norm3d); 2],
}

impl ConvBlock {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
    ) -> Self {
        let mut unit = |i: usize, c: usize| {
            (
                Conv3d::same(store, rng, &format!("{name}.conv{i}"), c, c_out, 3, true),
                Norm3d::new(store, &format!("{name}.norm{i}"), NormKind::Instance, c_out),
            )
        };
        let first = unit(1, c_in);
        let second = unit(2, c_out);
        ConvBlock { units: [first, second] }
    }

    pub fn forward<T: Element>(&self, p: &Params<T>, x: &Var<T>) -> Result<Var<T>> {
        let mut y = x.clone();
        for (conv, norm) in &self.units {
            y = conv.forward(p, &y)?;
            y = leaky_relu(&y, T::of(LEAKY_SLOPE))?;
            y = norm.forward(p, &y)?;
        }
        Ok(y)
    }
}

#[derive(Debug, Clone)]
pub enum LevelBlock {
    Maxca(MaxcaBlock),
    DenseXca(DenseXcaBlock),
    DenseSa(DenseSaBlock),
    Conv(ConvBlock),
}

impl LevelBlock {
    pub fn forward<T: Element>(&self, p: &Params<T>, x: &Var<T>) -> Result<Var<T>> {
        match self {
            LevelBlock::Maxca(b) => b.forward(p, x),
            LevelBlock::DenseXca(b) => b.forward(p, x),
            LevelBlock::DenseSa(b) => b.forward(p, x),
            LevelBlock::Conv(b) => b.forward(p, x),
        }
    }
}

/// Standard deviation of the final convolution's initial weights.
pub const HEAD_INIT_STD: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct XcaMorph {
    pub cfg: NetConfig,
    pub stem: Conv3d,
    pub encoder: Vec<LevelBlock>,
    pub merges: Vec<PatchMerging>,
    pub decoder: Vec<ConvBlock>,
    pub head: Conv3d,
}

impl XcaMorph {
    /// Builds the network, registering its parameters in `store` in a fixed
    /// order.
    pub fn new<T: Element>(cfg: &NetConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let enc = &cfg.enc_channels;
        let stem = Conv3d::same(store, rng, "stem", 2, enc[0], 3, true);
        let mut encoder = Vec::with_capacity(enc.len());
        let mut merges = Vec::with_capacity(enc.len() - 1);
        for l in 0..enc.len() {
            let name = format!("enc{l}");
            let (c, h) = (enc[l], cfg.heads[l]);
            encoder.push(match cfg.level_kind(l) {
                LevelKind::Maxca => LevelBlock::Maxca(MaxcaBlock::new(store, rng, &name, &cfg.block_config(l))?),
                LevelKind::DenseXca => {
                    LevelBlock::DenseXca(DenseXcaBlock::new(store, rng, &name, c, h, cfg.learnable_tau)?)
                }
                LevelKind::DenseSa => {
                    LevelBlock::DenseSa(DenseSaBlock::new(store, rng, &name, c, h, cfg.allow_large_sa)?)
                }
                LevelKind::Conv => LevelBlock::Conv(ConvBlock::new(store, rng, &name, c, c)),
            });
            if l + 1 < enc.len() {
                merges.push(PatchMerging::new(store, rng, &format!("merge{l}"), c, enc[l + 1]));
            }
        }
        let mut decoder = Vec::with_capacity(cfg.dec_channels.len());
        let mut prev = enc[enc.len() - 1];
        for (s, &c) in cfg.dec_channels.iter().enumerate() {
            let skip = enc[enc.len() - 2 - s];
            decoder.push(ConvBlock::new(store, rng, &format!("dec{s}"), prev + skip, c));
            prev = c;
        }
        let head = Conv3d {
            weight: store.add("head.weight", normal(&[3, prev, 3, 3, 3], HEAD_INIT_STD, rng)),
            bias: Some(store.add("head.bias", Tensor::zeros(&[3]))),
            c_in: prev,
            c_out: 3,
            kernel: 3,
            stride: 1,
            pad: 1,
        };
        Ok(XcaMorph {
            cfg: cfg.clone(),
            stem,
            encoder,
            merges,
            decoder,
            head,
        })
    }

    /// Displacement field `[3][H][W][D]` for single-channel `fixed` and
    /// `moving` images of the declared input extents.
    pub fn forward<T: Element>(&self, p: &Params<T>, fixed: &Var<T>, moving: &Var<T>) -> Result<Var<T>> {
        let [h, w, d] = self.cfg.input;
        let want = [1, h, w, d];
        for img in [fixed, moving] {
            if img.shape() != want {
                return Err(shape_mismatch("network input", img.shape(), &want));
            }
        }
        let mut x = self.stem.forward(p, &concat(&[fixed, moving], 0)?)?;
        let mut skips = Vec::with_capacity(self.merges.len());
        for (l, block) in self.encoder.iter().enumerate() {
            x = block.forward(p, &x)?;
            if let Some(merge) = self.merges.get(l) {
                skips.push(x.clone());
                x = merge.forward(p, &x)?;
            }
        }
        for stage in &self.decoder {
            let skip = skips.pop().expect("one skip per decoder stage");
            let up = upsample2x(&x, self.cfg.upsample)?;
            x = stage.forward(p, &concat(&[&up, &skip], 0)?)?;
        }
        self.head.forward(p, &x)
    }
}
