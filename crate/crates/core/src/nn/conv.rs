//! Direct 3D convolution. The input is zero-padded once; each (channel, tap)
//! pair is then a contiguous slice of the padded grid, so the product needs
//! no column matrix. Outputs are computed on the padded grid and cropped.

use std::borrow::Cow;

use rand::Rng;

use crate::autodiff::{Backward, BackwardCtx, Var};
use crate::error::{shape_mismatch, Error, Result};
use crate::nn::params::{uniform_fan_in, ParamId, ParamStore, Params};
use crate::simd::{gather_dot, gather_gemm};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    c_in: usize,
    input: [usize; 3],
    k: usize,
    stride: usize,
    pad: usize,
    output: [usize; 3],
}

impl Geometry {
    fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x.len() != 4 || w.len() != 5 || w[1] != x[0] || w[2] != w[3] || w[3] != w[4] {
            return Err(shape_mismatch("conv3d", x, w));
        }
        let k = w[2];
        if stride == 0 {
            return Err(Error::Config("conv3d stride must be positive".into()));
        }
        if pad >= k {
            return Err(Error::Config(format!("conv3d padding {pad} must be below kernel {k}")));
        }
        let mut output = [0; 3];
        for a in 0..3 {
            let span = x[a + 1] + 2 * pad;
            if span < k {
                return Err(shape_mismatch("conv3d", x, w));
            }
            output[a] = (span - k) / stride + 1;
        }
        Ok(Geometry {
            c_in: x[0],
            input: [x[1], x[2], x[3]],
            k,
            stride,
            pad,
            output,
        })
    }

    /// Output extents before striding.
    fn dense_output(&self) -> [usize; 3] {
        self.input.map(|e| e + 2 * self.pad - self.k + 1)
    }
}

/// A stride-1 correlation laid out on the zero-padded input grid.
struct Grid {
    padded: [usize; 3],
    output: [usize; 3],
    /// Offset of each (channel, tap) row within the padded buffer.
    offs: Vec<usize>,
    /// Span of padded-grid positions covering every output voxel.
    span: usize,
}

impl Grid {
    fn new(channels: usize, input: [usize; 3], k: usize, pad: usize) -> Self {
        let padded = input.map(|e| e + 2 * pad);
        let output = padded.map(|e| e - k + 1);
        let [_, pw, pd] = padded;
        let vol: usize = padded.iter().product();
        let mut offs = Vec::with_capacity(channels * k * k * k);
        for c in 0..channels {
            for kh in 0..k {
                for kw in 0..k {
                    for kd in 0..k {
                        offs.push(c * vol + (kh * pw + kw) * pd + kd);
                    }
                }
            }
        }
        let [oh, ow, od] = output;
        let span = ((oh - 1) * pw + ow - 1) * pd + od;
        Grid {
            padded,
            output,
            offs,
            span,
        }
    }

    fn pad<'a, T: Element>(&self, x: &'a [T], channels: usize, input: [usize; 3], pad: usize) -> Cow<'a, [T]> {
        if pad == 0 {
            return Cow::Borrowed(x);
        }
        let [h, w, d] = input;
        let [ph, pw, pd] = self.padded;
        let mut out = vec![T::zero(); channels * ph * pw * pd];
        for c in 0..channels {
            for i in 0..h {
                for j in 0..w {
                    let src = ((c * h + i) * w + j) * d;
                    let dst = ((c * ph + i + pad) * pw + j + pad) * pd + pad;
                    out[dst..dst + d].copy_from_slice(&x[src..src + d]);
                }
            }
        }
        Cow::Owned(out)
    }

    /// Position on the padded grid of each output line start.
    fn lines(&self) -> impl Iterator<Item = usize> + '_ {
        let [_, pw, pd] = self.padded;
        let [oh, ow, _] = self.output;
        (0..oh).flat_map(move |a| (0..ow).map(move |b| (a * pw + b) * pd))
    }

    /// `y = w * x` with `w: [m][channels][k][k][k]`, returned as `[m][output]`.
    fn correlate<T: Element>(&self, m: usize, w: &[T], xp: &[T]) -> Vec<T> {
        let mut full = vec![T::zero(); m * self.span];
        gather_gemm(m, self.span, w, xp, &self.offs, &mut full, self.span, false);
        let od = self.output[2];
        let per: usize = self.output.iter().product();
        let mut out = Vec::with_capacity(m * per);
        for row in full.chunks_exact(self.span) {
            for q in self.lines() {
                out.extend_from_slice(&row[q..q + od]);
            }
        }
        out
    }

    /// Gradient of `sum(g * y)` with respect to `w`, for `g: [m][output]`.
    fn weight_grad<T: Element>(&self, m: usize, g: &[T], xp: &[T]) -> Vec<T> {
        let od = self.output[2];
        let per: usize = self.output.iter().product();
        let mut spread = vec![T::zero(); m * self.span];
        for (i, row) in spread.chunks_exact_mut(self.span).enumerate() {
            let src = &g[i * per..(i + 1) * per];
            for (l, q) in self.lines().enumerate() {
                row[q..q + od].copy_from_slice(&src[l * od..(l + 1) * od]);
            }
        }
        gather_dot(m, self.span, &spread, self.span, xp, &self.offs)
    }
}

/// Keeps every `stride`-th voxel of `[c][dense]`.
fn subsample<T: Element>(y: &[T], c: usize, dense: [usize; 3], out: [usize; 3], stride: usize) -> Vec<T> {
    let [_, dw, dd] = dense;
    let [oh, ow, od] = out;
    let per: usize = dense.iter().product();
    let mut v = Vec::with_capacity(c * oh * ow * od);
    for ch in 0..c {
        for a in 0..oh {
            for b in 0..ow {
                for e in 0..od {
                    v.push(y[ch * per + ((a * stride) * dw + b * stride) * dd + e * stride]);
                }
            }
        }
    }
    v
}

/// Adjoint of [`subsample`]: scatters into zeros.
fn spread<T: Element>(g: &[T], c: usize, dense: [usize; 3], out: [usize; 3], stride: usize) -> Vec<T> {
    let [_, dw, dd] = dense;
    let [oh, ow, od] = out;
    let per: usize = dense.iter().product();
    let mut v = vec![T::zero(); c * per];
    let mut it = g.iter();
    for ch in 0..c {
        for a in 0..oh {
            for b in 0..ow {
                for e in 0..od {
                    v[ch * per + ((a * stride) * dw + b * stride) * dd + e * stride] = *it.next().unwrap();
                }
            }
        }
    }
    v
}

struct Conv3dOp {
    geom: Geometry,
}

impl<T: Element> Backward<T> for Conv3dOp {
    fn name(&self) -> &'static str {
        "conv3d"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let g = &self.geom;
        let x = ctx.inputs[0].value();
        let w = ctx.inputs[1].value();
        let c_out = w.shape()[0];
        let dense = g.dense_output();
        let grad: Cow<'_, [T]> = if g.stride == 1 {
            Cow::Borrowed(ctx.grad.data())
        } else {
            Cow::Owned(spread(ctx.grad.data(), c_out, dense, g.output, g.stride))
        };
        let gw = ctx.needs[1].then(|| {
            let grid = Grid::new(g.c_in, g.input, g.k, g.pad);
            let xp = grid.pad(x.data(), g.c_in, g.input, g.pad);
            Tensor::from_parts(w.shape().to_vec(), grid.weight_grad(c_out, &grad, &xp))
        });
        let gx = ctx.needs[0].then(|| input_grad(g, w, &grad));
        let mut out = vec![gx, gw];
        if ctx.inputs.len() == 3 {
            let n: usize = dense.iter().product();
            out.push(ctx.needs[2].then(|| {
                let sums = (0..c_out)
                    .map(|c| grad[c * n..(c + 1) * n].iter().copied().sum())
                    .collect();
                Tensor::from_parts(vec![c_out], sums)
            }));
        }
        Ok(out)
    }
}

/// For stride 1 the input gradient is a full correlation of the output
/// gradient with the spatially flipped, channel-transposed kernel.
fn input_grad<T: Element>(g: &Geometry, w: &Tensor<T>, grad: &[T]) -> Tensor<T> {
    let (c_out, c_in, k) = (w.shape()[0], w.shape()[1], g.k);
    let k3 = k * k * k;
    let wd = w.data();
    let mut flipped = vec![T::zero(); c_in * c_out * k3];
    for co in 0..c_out {
        for ci in 0..c_in {
            for t in 0..k3 {
                flipped[(ci * c_out + co) * k3 + (k3 - 1 - t)] = wd[(co * c_in + ci) * k3 + t];
            }
        }
    }
    let dense = g.dense_output();
    let back_pad = k - 1 - g.pad;
    let grid = Grid::new(c_out, dense, k, back_pad);
    let gp = grid.pad(grad, c_out, dense, back_pad);
    let [h, ww, d] = g.input;
    Tensor::from_parts(vec![c_in, h, ww, d], grid.correlate(c_in, &flipped, &gp))
}

/// Zero-padded cross-correlation of `x: [C_in][H][W][D]` with
/// `w: [C_out][C_in][k][k][k]`, plus an optional per-channel bias.
pub fn conv3d<T: Element>(x: &Var<T>, w: &Var<T>, bias: Option<&Var<T>>, stride: usize, pad: usize) -> Result<Var<T>> {
    let geom = Geometry::new(x.shape(), w.shape(), stride, pad)?;
    let c_out = w.shape()[0];
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(shape_mismatch("conv3d bias", b.shape(), &[c_out]));
        }
    }
    let grid = Grid::new(geom.c_in, geom.input, geom.k, geom.pad);
    let xp = grid.pad(x.value().data(), geom.c_in, geom.input, geom.pad);
    let mut out = grid.correlate(c_out, w.value().data(), &xp);
    drop(xp);
    if geom.stride != 1 {
        out = subsample(&out, c_out, grid.output, geom.output, geom.stride);
    }
    if let Some(b) = bias {
        let n = out.len() / c_out;
        for (row, &bv) in out.chunks_exact_mut(n).zip(b.value().data()) {
            row.iter_mut().for_each(|v| *v += bv);
        }
    }
    let [oh, ow, od] = geom.output;
    let value = Tensor::from_parts(vec![c_out, oh, ow, od], out);
    let op = Conv3dOp { geom };
    match bias {
        Some(b) => Var::from_op(value, &[x, w, b], op),
        None => Var::from_op(value, &[x, w], op),
    }
}

/// A convolution layer whose tensors live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv3d {
    /// A stride-1 convolution that preserves spatial extents for odd `kernel`.
    pub fn same<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        bias: bool,
    ) -> Self {
        let fan_in = c_in * kernel.pow(3);
        let weight = store.add(
            format!("{name}.weight"),
            uniform_fan_in(&[c_out, c_in, kernel, kernel, kernel], fan_in, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[c_out])));
        Conv3d {
            weight,
            bias,
            c_in,
            c_out,
            kernel,
            stride: 1,
            pad: kernel / 2,
        }
    }

    pub fn forward<T: Element>(&self, p: &Params<T>, x: &Var<T>) -> Result<Var<T>> {
        conv3d(
            x,
            p.get(self.weight),
            self.bias.map(|b| p.get(b)),
            self.stride,
            self.pad,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(shape: &[usize], f: impl FnMut(usize) -> f64) -> Var<f64> {
        Var::constant(Tensor::from_fn(shape, f))
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = var(&[2, 3, 4, 5], |i| (i as f64 * 0.37).sin());
        let w = var(&[2, 2, 3, 3, 3], |i| {
            // Center tap of (co, ci) with co == ci.
            let co = i / 54;
            let ci = (i / 27) % 2;
            if co == ci && i % 27 == 13 {
                1.0
            } else {
                0.0
            }
        });
        let y = conv3d(&x, &w, None, 1, 1).unwrap();
        assert!(y.value().max_abs_diff(x.value()) == 0.0);
    }

    #[test]
    fn ones_kernel_counts_neighbors() {
        let x = var(&[1, 5, 5, 5], |_| 1.0);
        let w = var(&[1, 1, 3, 3, 3], |_| 1.0);
        let y = conv3d(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y.value().get(&[0, 2, 2, 2]), 27.0);
        assert_eq!(y.value().get(&[0, 0, 0, 0]), 8.0);
        assert_eq!(y.value().get(&[0, 0, 2, 2]), 18.0);
    }

    #[test]
    fn output_extent_formula() {
        let x = var(&[1, 7, 6, 5], |_| 1.0);
        let w = var(&[2, 1, 3, 3, 3], |_| 1.0);
        let y = conv3d(&x, &w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 4, 3, 3]);
        let y = conv3d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[2, 5, 4, 3]);
    }

    #[test]
    fn channel_mismatch_is_error() {
        let x = var(&[2, 4, 4, 4], |_| 1.0);
        let w = var(&[1, 3, 3, 3, 3], |_| 1.0);
        assert!(conv3d(&x, &w, None, 1, 1).is_err());
    }

    /// Seven nested loops: forward value, and gradients of `sum(r * y)`.
    #[allow(clippy::type_complexity)]
    fn naive(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        r: &Tensor<f64>,
        stride: usize,
        pad: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let [ci_n, h, wd, d] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let (co_n, k) = (w.shape()[0], w.shape()[2]);
        let [oh, ow, od] = [r.shape()[1], r.shape()[2], r.shape()[3]];
        let mut y = vec![0.0; co_n * oh * ow * od];
        let mut gx = vec![0.0; x.numel()];
        let mut gw = vec![0.0; w.numel()];
        for co in 0..co_n {
            for a in 0..oh {
                for b in 0..ow {
                    for c in 0..od {
                        let o = ((co * oh + a) * ow + b) * od + c;
                        for ci in 0..ci_n {
                            for p in 0..k {
                                for q in 0..k {
                                    for s in 0..k {
                                        let i = (a * stride + p) as isize - pad as isize;
                                        let j = (b * stride + q) as isize - pad as isize;
                                        let l = (c * stride + s) as isize - pad as isize;
                                        if i < 0 || j < 0 || l < 0 {
                                            continue;
                                        }
                                        let (i, j, l) = (i as usize, j as usize, l as usize);
                                        if i >= h || j >= wd || l >= d {
                                            continue;
                                        }
                                        let xi = ((ci * h + i) * wd + j) * d + l;
                                        let wi = (((co * ci_n + ci) * k + p) * k + q) * k + s;
                                        y[o] += w.data()[wi] * x.data()[xi];
                                        gx[xi] += w.data()[wi] * r.data()[o];
                                        gw[wi] += x.data()[xi] * r.data()[o];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        (y, gx, gw)
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn matches_loop_oracle_with_gradients() {
        let cases = [
            ([3, 5, 6, 7], 4, 3, 1, 1),
            ([2, 9, 8, 11], 5, 3, 1, 1),
            ([4, 6, 6, 6], 3, 1, 1, 0),
            ([2, 7, 6, 5], 3, 3, 2, 1),
            ([1, 4, 5, 6], 2, 3, 1, 0),
            ([2, 13, 12, 14], 9, 3, 1, 1),
        ];
        for (n, &(xs, co, k, stride, pad)) in cases.iter().enumerate() {
            let seed = n as f64;
            let x = Tensor::from_fn(&xs, |i| ((i as f64 + seed) * 0.731).sin());
            let w = Tensor::from_fn(&[co, xs[0], k, k, k], |i| ((i as f64 * 1.37 + seed).cos()) * 0.3);
            let xv = Var::param(x.clone());
            let wv = Var::param(w.clone());
            let y = conv3d(&xv, &wv, None, stride, pad).unwrap();
            let r = Tensor::from_fn(y.shape(), |i| ((i as f64) * 0.113 - seed).sin());
            let (ey, egx, egw) = naive(&x, &w, &r, stride, pad);
            assert!(max_diff(y.value().data(), &ey) < 1e-10, "forward case {n}");
            let loss = crate::ops::sum(&crate::ops::mul(&y, &Var::constant(r)).unwrap()).unwrap();
            let grads = crate::backward(&loss).unwrap();
            assert!(max_diff(grads.get(&xv).unwrap().data(), &egx) < 1e-10, "dx case {n}");
            assert!(max_diff(grads.get(&wv).unwrap().data(), &egw) < 1e-10, "dw case {n}");
        }
    }

    #[test]
    fn single_precision_tracks_double() {
        let x = Tensor::<f64>::from_fn(&[5, 11, 10, 9], |i| (i as f64 * 0.37).sin());
        let w = Tensor::<f64>::from_fn(&[11, 5, 3, 3, 3], |i| (i as f64 * 0.91).cos() * 0.2);
        let b = Tensor::<f64>::from_fn(&[11], |i| i as f64 * 0.1);
        let y64 = conv3d(
            &Var::constant(x.clone()),
            &Var::constant(w.clone()),
            Some(&Var::constant(b.clone())),
            1,
            1,
        )
        .unwrap();
        let y32 = conv3d(
            &Var::constant(x.cast::<f32>()),
            &Var::constant(w.cast::<f32>()),
            Some(&Var::constant(b.cast::<f32>())),
            1,
            1,
        )
        .unwrap();
        let back: Tensor<f64> = y32.value().cast();
        assert!(back.max_abs_diff(y64.value()) < 1e-4);
    }
}
