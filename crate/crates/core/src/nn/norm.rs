//! Instance normalization (per channel over space) and layer normalization
//! (per voxel over channels), both with learnable per-channel affine terms.

use crate::autodiff::{Backward, BackwardCtx, Var};
use crate::error::{shape_mismatch, Error, Result};
use crate::nn::params::{ParamId, ParamStore, Params};
use crate::tensor::{Element, Tensor};

/// Which axis the statistics are taken over, for a `[C][S]` view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Reduce {
    /// Over the spatial positions of each channel.
    Spatial,
    /// Over the channels at each spatial position.
    Channels,
}

struct Norm<T> {
    reduce: Reduce,
    eps: T,
}

/// Returns (groups, group length, offset of element j in group g).
fn layout(reduce: Reduce, c: usize, s: usize) -> (usize, usize, impl Fn(usize, usize) -> usize) {
    match reduce {
        Reduce::Spatial => (
            c,
            s,
            Box::new(move |g: usize, j: usize| g * s + j) as Box<dyn Fn(usize, usize) -> usize>,
        ),
        Reduce::Channels => (
            s,
            c,
            Box::new(move |g: usize, j: usize| j * s + g) as Box<dyn Fn(usize, usize) -> usize>,
        ),
    }
}

/// Per-group (mean, 1/sqrt(var + eps)) with the biased variance.
fn stats<T: Element>(x: &[T], reduce: Reduce, c: usize, s: usize, eps: T) -> Vec<(T, T)> {
    let (groups, len, at) = layout(reduce, c, s);
    let n = T::of(len as f64);
    (0..groups)
        .map(|g| {
            let mean = (0..len).map(|j| x[at(g, j)]).sum::<T>() / n;
            let var = (0..len).map(|j| (x[at(g, j)] - mean).powi(2)).sum::<T>() / n;
            (mean, T::one() / (var + eps).sqrt())
        })
        .collect()
}

fn split_shape(shape: &[usize]) -> (usize, usize) {
    (shape[0], shape[1..].iter().product())
}

impl<T: Element> Backward<T> for Norm<T> {
    fn name(&self) -> &'static str {
        match self.reduce {
            Reduce::Spatial => "instance_norm",
            Reduce::Channels => "layer_norm",
        }
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let x = ctx.inputs[0].value().data();
        let gamma = ctx.inputs[1].value().data();
        let g = ctx.grad.data();
        let (c, s) = split_shape(ctx.output.shape());
        let st = stats(x, self.reduce, c, s, self.eps);
        let (groups, len, at) = layout(self.reduce, c, s);
        let channel = |i: usize| i / s;
        let n = T::of(len as f64);
        let mut gx = vec![T::zero(); x.len()];
        let mut ggamma = vec![T::zero(); c];
        let mut gbeta = vec![T::zero(); c];
        for (grp, &(mean, inv)) in st.iter().enumerate().take(groups) {
            let mut sum_d = T::zero();
            let mut sum_dx = T::zero();
            for j in 0..len {
                let i = at(grp, j);
                let xh = (x[i] - mean) * inv;
                let d = g[i] * gamma[channel(i)];
                sum_d += d;
                sum_dx += d * xh;
                ggamma[channel(i)] += g[i] * xh;
                gbeta[channel(i)] += g[i];
            }
            let (md, mdx) = (sum_d / n, sum_dx / n);
            for j in 0..len {
                let i = at(grp, j);
                let xh = (x[i] - mean) * inv;
                gx[i] = inv * (g[i] * gamma[channel(i)] - md - xh * mdx);
            }
        }
        Ok(vec![
            ctx.needs[0].then(|| Tensor::from_parts(ctx.output.shape().to_vec(), gx)),
            ctx.needs[1].then(|| Tensor::from_parts(vec![c], ggamma)),
            ctx.needs[2].then(|| Tensor::from_parts(vec![c], gbeta)),
        ])
    }
}

fn normalize<T: Element>(reduce: Reduce, x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Result<Var<T>> {
    if eps <= T::zero() {
        return Err(Error::Config("normalization eps must be positive".into()));
    }
    if x.shape().len() < 2 {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: "normalization expects [C][spatial...]".into(),
        });
    }
    let (c, s) = split_shape(x.shape());
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_mismatch("norm affine", gamma.shape(), &[c]));
    }
    let data = x.value().data();
    let st = stats(data, reduce, c, s, eps);
    let (gm, bt) = (gamma.value().data(), beta.value().data());
    let out = (0..data.len())
        .map(|i| {
            let (ch, pos) = (i / s, i % s);
            let (mean, inv) = match reduce {
                Reduce::Spatial => st[ch],
                Reduce::Channels => st[pos],
            };
            gm[ch] * (data[i] - mean) * inv + bt[ch]
        })
        .collect();
    Var::from_op(
        Tensor::from_parts(x.shape().to_vec(), out),
        &[x, gamma, beta],
        Norm { reduce, eps },
    )
}

/// Zero-mean, unit-variance per channel over the spatial axes of
/// `x: [C][H][W][D]`, followed by `gamma[c] * x + beta[c]`.
pub fn instance_norm<T: Element>(x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Result<Var<T>> {
    normalize(Reduce::Spatial, x, gamma, beta, eps)
}

/// Zero-mean, unit-variance over the channel axis at each voxel, followed
/// by the per-channel affine map.
pub fn layer_norm<T: Element>(x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Result<Var<T>> {
    normalize(Reduce::Channels, x, gamma, beta, eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Instance,
    Layer,
}

/// Learnable normalization layer (scale initialized to 1, shift to 0).
#[derive(Debug, Clone)]
pub struct Norm3d {
    pub kind: NormKind,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl Norm3d {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, kind: NormKind, channels: usize) -> Self {
        Norm3d {
            kind,
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            eps: 1e-5,
        }
    }

    pub fn forward<T: Element>(&self, p: &Params<T>, x: &Var<T>) -> Result<Var<T>> {
        let (g, b, eps) = (p.get(self.gamma), p.get(self.beta), T::of(self.eps));
        match self.kind {
            NormKind::Instance => instance_norm(x, g, b, eps),
            NormKind::Layer => layer_norm(x, g, b, eps),
        }
    }
}
