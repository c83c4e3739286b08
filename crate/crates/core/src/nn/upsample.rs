//! Factor-2 spatial upsampling, applied as separable 1D interpolation.

use crate::autodiff::{Backward, BackwardCtx, Var};
use crate::error::{Error, Result};
use crate::ops::axis_split;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsampleMode {
    Trilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    w1: f64,
}

/// Source taps with the half-pixel (align-corners = false) convention;
/// coordinates before the first sample clamp to it.
fn taps(mode: UpsampleMode, n_in: usize, n_out: usize) -> Vec<Tap> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| match mode {
            UpsampleMode::Trilinear => {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(n_in - 1);
                let i1 = (i0 + 1).min(n_in - 1);
                Tap {
                    i0,
                    i1,
                    w1: src - i0 as f64,
                }
            }
            UpsampleMode::Nearest => {
                let i0 = ((o as f64 * scale).floor() as usize).min(n_in - 1);
                Tap { i0, i1: i0, w1: 0.0 }
            }
        })
        .collect()
}

fn interp<T: Element>(data: &[T], shape: &[usize], axis: usize, taps: &[Tap]) -> Vec<T> {
    let (outer, n_in, inner) = axis_split(shape, axis);
    let n_out = taps.len();
    let mut out = vec![T::zero(); outer * n_out * inner];
    for o in 0..outer {
        let src = &data[o * n_in * inner..(o + 1) * n_in * inner];
        let dst = &mut out[o * n_out * inner..(o + 1) * n_out * inner];
        for (j, t) in taps.iter().enumerate() {
            let (w0, w1) = (T::of(1.0 - t.w1), T::of(t.w1));
            let a = &src[t.i0 * inner..(t.i0 + 1) * inner];
            let b = &src[t.i1 * inner..(t.i1 + 1) * inner];
            for ((d, &x0), &x1) in dst[j * inner..(j + 1) * inner].iter_mut().zip(a).zip(b) {
                *d = w0 * x0 + w1 * x1;
            }
        }
    }
    out
}

fn interp_adjoint<T: Element>(grad: &[T], in_shape: &[usize], axis: usize, taps: &[Tap]) -> Vec<T> {
    let (outer, n_in, inner) = axis_split(in_shape, axis);
    let n_out = taps.len();
    let mut out = vec![T::zero(); outer * n_in * inner];
    for o in 0..outer {
        let src = &grad[o * n_out * inner..(o + 1) * n_out * inner];
        let dst = &mut out[o * n_in * inner..(o + 1) * n_in * inner];
        for (j, t) in taps.iter().enumerate() {
            let (w0, w1) = (T::of(1.0 - t.w1), T::of(t.w1));
            for q in 0..inner {
                let g = src[j * inner + q];
                dst[t.i0 * inner + q] += w0 * g;
                dst[t.i1 * inner + q] += w1 * g;
            }
        }
    }
    out
}

struct Upsample {
    mode: UpsampleMode,
}

impl<T: Element> Backward<T> for Upsample {
    fn name(&self) -> &'static str {
        match self.mode {
            UpsampleMode::Trilinear => "upsample_trilinear",
            UpsampleMode::Nearest => "upsample_nearest",
        }
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let in_shape = ctx.inputs[0].shape();
        let mut shape = ctx.output.shape().to_vec();
        let mut g = ctx.grad.to_vec();
        for axis in (1..4).rev() {
            let t = taps(self.mode, in_shape[axis], shape[axis]);
            shape[axis] = in_shape[axis];
            g = interp_adjoint(&g, &shape, axis, &t);
        }
        Ok(vec![Some(Tensor::from_parts(in_shape.to_vec(), g))])
    }
}

/// `[C][H][W][D] -> [C][2H][2W][2D]`.
pub fn upsample2x<T: Element>(x: &Var<T>, mode: UpsampleMode) -> Result<Var<T>> {
    if x.shape().len() != 4 {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: "upsampling expects [C][H][W][D]".into(),
        });
    }
    let mut shape = x.shape().to_vec();
    let mut data = x.value().to_vec();
    for axis in 1..4 {
        let t = taps(mode, shape[axis], 2 * shape[axis]);
        data = interp(&data, &shape, axis, &t);
        shape[axis] *= 2;
    }
    Var::from_op(Tensor::from_parts(shape, data), &[x], Upsample { mode })
}

pub fn upsample_trilinear<T: Element>(x: &Var<T>) -> Result<Var<T>> {
    upsample2x(x, UpsampleMode::Trilinear)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let x = Var::constant(Tensor::<f64>::full(&[2, 3, 2, 4], 3.0));
        let y = upsample_trilinear(&x).unwrap();
        assert_eq!(y.shape(), &[2, 6, 4, 8]);
        assert!(y.value().data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn ramp_is_reproduced_and_clamped() {
        let n = 5;
        let x = Var::constant(Tensor::<f64>::from_fn(&[1, n, 1, 1], |i| i as f64));
        let y = upsample_trilinear(&x).unwrap();
        for o in 0..2 * n {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            let expect = src.clamp(0.0, (n - 1) as f64);
            assert!((y.value().get(&[0, o, 0, 0]) - expect).abs() < 1e-12, "o={o}");
        }
    }

    #[test]
    fn nearest_repeats() {
        let x = Var::constant(Tensor::<f64>::from_fn(&[1, 2, 1, 1], |i| i as f64 + 1.0));
        let y = upsample2x(&x, UpsampleMode::Nearest).unwrap();
        assert_eq!(
            y.value().data(),
            &[1., 1., 1., 1., 1., 1., 1., 1., 2., 2., 2., 2., 2., 2., 2., 2.]
        );
    }
}
