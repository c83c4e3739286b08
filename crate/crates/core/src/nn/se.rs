//! Squeeze-and-excitation channel gating.

use rand::Rng;

use crate::autodiff::{Backward, BackwardCtx, Var};
use crate::error::{shape_mismatch, Error, Result};
use crate::nn::activation::{relu, sigmoid};
use crate::nn::params::{uniform_fan_in, ParamId, ParamStore, Params};
use crate::ops::{add, matmul, reshape};
use crate::tensor::{Element, Tensor};

struct GlobalAvgPool;

impl<T: Element> Backward<T> for GlobalAvgPool {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let shape = ctx.inputs[0].shape();
        let s: usize = shape[1..].iter().product();
        let inv = T::one() / T::of(s as f64);
        let g = ctx.grad.data();
        Ok(vec![Some(Tensor::from_fn(shape, |i| g[i / s] * inv))])
    }
}

/// Spatial mean of each channel: `[C][...] -> [C]`.
pub fn global_avg_pool<T: Element>(x: &Var<T>) -> Result<Var<T>> {
    let c = x.shape()[0];
    let s: usize = x.shape()[1..].iter().product();
    let data = x.value().data();
    let inv = T::one() / T::of(s as f64);
    let out = (0..c)
        .map(|ch| data[ch * s..(ch + 1) * s].iter().copied().sum::<T>() * inv)
        .collect();
    Var::from_op(Tensor::from_parts(vec![c], out), &[x], GlobalAvgPool)
}

struct ChannelScale;

impl<T: Element> Backward<T> for ChannelScale {
    fn name(&self) -> &'static str {
        "channel_scale"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let x = ctx.inputs[0].value();
        let gate = ctx.inputs[1].value().data();
        let s = x.numel() / gate.len();
        let g = ctx.grad.data();
        let gx = ctx.needs[0].then(|| Tensor::from_fn(x.shape(), |i| g[i] * gate[i / s]));
        let gg = ctx.needs[1].then(|| {
            let xd = x.data();
            Tensor::from_fn(&[gate.len()], |c| (c * s..(c + 1) * s).map(|i| g[i] * xd[i]).sum())
        });
        Ok(vec![gx, gg])
    }
}

/// Multiplies channel `c` of `x: [C][...]` by `gate[c]`.
pub fn channel_scale<T: Element>(x: &Var<T>, gate: &Var<T>) -> Result<Var<T>> {
    let c = x.shape()[0];
    if gate.shape() != [c] {
        return Err(shape_mismatch("channel_scale", x.shape(), gate.shape()));
    }
    let s = x.value().numel() / c;
    let g = gate.value().data();
    let xd = x.value().data();
    let y = Tensor::from_fn(x.shape(), |i| xd[i] * g[i / s]);
    Var::from_op(y, &[x, gate], ChannelScale)
}

/// Pool, `C -> C/r` dense, ReLU, `C/r -> C` dense, sigmoid, channel scaling.
pub fn se_channel_attention<T: Element>(
    x: &Var<T>,
    w1: &Var<T>,
    b1: &Var<T>,
    w2: &Var<T>,
    b2: &Var<T>,
) -> Result<Var<T>> {
    let c = x.shape()[0];
    let pooled = reshape(&global_avg_pool(x)?, &[c, 1])?;
    let hidden = w1.shape()[0];
    let h = add(&matmul(w1, &pooled)?, &reshape(b1, &[hidden, 1])?)?;
    let h = relu(&h)?;
    let z = add(&matmul(w2, &h)?, &reshape(b2, &[c, 1])?)?;
    let gate = reshape(&sigmoid(&z)?, &[c])?;
    channel_scale(x, &gate)
}

/// Squeeze-and-excitation layer with reduction ratio `r`.
#[derive(Debug, Clone)]
pub struct SqueezeExcite {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub channels: usize,
    pub reduction: usize,
}

impl SqueezeExcite {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
        reduction: usize,
    ) -> Result<Self> {
        if reduction == 0 || channels < reduction || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "squeeze-excitation needs channels ({channels}) divisible by and >= reduction ({reduction})"
            )));
        }
        let hidden = channels / reduction;
        Ok(SqueezeExcite {
            w1: store.add(
                format!("{name}.fc1.weight"),
                uniform_fan_in(&[hidden, channels], channels, rng),
            ),
            b1: store.add(format!("{name}.fc1.bias"), Tensor::zeros(&[hidden])),
            w2: store.add(
                format!("{name}.fc2.weight"),
                uniform_fan_in(&[channels, hidden], hidden, rng),
            ),
            b2: store.add(format!("{name}.fc2.bias"), Tensor::zeros(&[channels])),
            channels,
            reduction,
        })
    }

    pub fn forward<T: Element>(&self, p: &Params<T>, x: &Var<T>) -> Result<Var<T>> {
        se_channel_attention(x, p.get(self.w1), p.get(self.b1), p.get(self.w2), p.get(self.b2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_se(c: usize, r: usize) -> [Var<f64>; 4] {
        [
            Var::constant(Tensor::zeros(&[c / r, c])),
            Var::constant(Tensor::zeros(&[c / r])),
            Var::constant(Tensor::zeros(&[c, c / r])),
            Var::constant(Tensor::zeros(&[c])),
        ]
    }

    #[test]
    fn zero_weights_halve_input() {
        let x = Var::constant(Tensor::from_fn(&[4, 2, 2, 2], |i| i as f64 - 7.0));
        let [w1, b1, w2, b2] = zero_se(4, 4);
        let y = se_channel_attention(&x, &w1, &b1, &w2, &b2).unwrap();
        let half = x.value().map(|v| 0.5 * v);
        assert!(y.value().bit_eq(&half));
        let x2 = Var::constant(x.value().map(|v| 2.0 * v));
        let y2 = se_channel_attention(&x2, &w1, &b1, &w2, &b2).unwrap();
        assert!(y2.value().bit_eq(x.value()));
    }

    #[test]
    fn rejects_too_few_channels() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = rand::rng();
        assert!(SqueezeExcite::new(&mut store, &mut rng, "se", 2, 4).is_err());
        assert!(SqueezeExcite::new(&mut store, &mut rng, "se", 6, 4).is_err());
        assert!(SqueezeExcite::new(&mut store, &mut rng, "se", 8, 4).is_ok());
    }
}
