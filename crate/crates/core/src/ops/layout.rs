use crate::autodiff::{Backward, BackwardCtx, Var};
use crate::error::{shape_mismatch, Error, Result};
use crate::ops::{axis_split, check_axis};
use crate::tensor::{numel, strides, Element, Tensor};

struct Reshape;

impl<T: Element> Backward<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(ctx.grad.reshape(ctx.inputs[0].shape())?)])
    }
}

/// Reinterprets the element order under a new shape with the same count.
pub fn reshape<T: Element>(x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
    Var::from_op(x.value().reshape(shape)?, &[x], Reshape)
}

/// Permutes the axes of a raw tensor: output axis `i` is input axis `perm[i]`.
pub fn permute_tensor<T: Element>(x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let shape = x.shape();
    let rank = shape.len();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: format!("{perm:?} is not a permutation of its axes"),
        });
    }
    if rank == 0 || perm.iter().enumerate().all(|(i, &p)| i == p) {
        return Ok(x.clone());
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let data = x.data();
    let mut out = Vec::with_capacity(data.len());
    let last = out_shape[rank - 1];
    let last_stride = src[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    'outer: loop {
        if last_stride == 1 {
            out.extend_from_slice(&data[base..base + last]);
        } else {
            out.extend((0..last).map(|j| data[base + j * last_stride]));
        }
        let mut ax = rank - 1;
        loop {
            if ax == 0 {
                break 'outer;
            }
            ax -= 1;
            idx[ax] += 1;
            base += src[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= src[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

fn inverse(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

struct Permute {
    perm: Vec<usize>,
}

impl<T: Element> Backward<T> for Permute {
    fn name(&self) -> &'static str {
        "permute"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(permute_tensor(ctx.grad, &inverse(&self.perm))?)])
    }
}

pub fn permute<T: Element>(x: &Var<T>, perm: &[usize]) -> Result<Var<T>> {
    let y = permute_tensor(x.value(), perm)?;
    Var::from_op(y, &[x], Permute { perm: perm.to_vec() })
}

fn narrow_tensor<T: Element>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Tensor<T> {
    let (outer, extent, inner) = axis_split(x.shape(), axis);
    let data = x.data();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        out.extend_from_slice(&data[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::from_parts(shape, out)
}

struct Narrow {
    axis: usize,
    start: usize,
}

impl<T: Element> Backward<T> for Narrow {
    fn name(&self) -> &'static str {
        "narrow"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let in_shape = ctx.inputs[0].shape();
        let (outer, extent, inner) = axis_split(in_shape, self.axis);
        let len = ctx.grad.shape()[self.axis];
        let g = ctx.grad.data();
        let mut out = vec![T::zero(); numel(in_shape)];
        for o in 0..outer {
            let dst = (o * extent + self.start) * inner;
            let src = o * len * inner;
            out[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
        }
        Ok(vec![Some(Tensor::from_parts(in_shape.to_vec(), out))])
    }
}

/// The sub-range `[start, start + len)` of `axis`.
pub fn narrow<T: Element>(x: &Var<T>, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
    check_axis("narrow", x.shape(), axis)?;
    if len == 0 || start + len > x.shape()[axis] {
        return Err(Error::IndexOutOfRange {
            index: start + len,
            extent: x.shape()[axis],
        });
    }
    let y = narrow_tensor(x.value(), axis, start, len);
    Var::from_op(y, &[x], Narrow { axis, start })
}

/// Splits `axis` into consecutive pieces of the given sizes.
pub fn split<T: Element>(x: &Var<T>, axis: usize, sizes: &[usize]) -> Result<Vec<Var<T>>> {
    check_axis("split", x.shape(), axis)?;
    if sizes.iter().sum::<usize>() != x.shape()[axis] {
        return Err(shape_mismatch("split", x.shape(), sizes));
    }
    let mut start = 0;
    sizes
        .iter()
        .map(|&len| {
            let piece = narrow(x, axis, start, len);
            start += len;
            piece
        })
        .collect()
}

struct Concat {
    axis: usize,
}

impl<T: Element> Backward<T> for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let mut start = 0;
        Ok(ctx
            .inputs
            .iter()
            .zip(ctx.needs)
            .map(|(inp, &need)| {
                let len = inp.shape()[self.axis];
                let g = need.then(|| narrow_tensor(ctx.grad, self.axis, start, len));
                start += len;
                g
            })
            .collect())
    }
}

/// Joins tensors along `axis`; all other extents must agree.
pub fn concat<T: Element>(xs: &[&Var<T>], axis: usize) -> Result<Var<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::Config("concat of zero tensors".into()))?;
    check_axis("concat", first.shape(), axis)?;
    let mut shape = first.shape().to_vec();
    shape[axis] = 0;
    for x in xs {
        let s = x.shape();
        if s.len() != shape.len()
            || s.iter()
                .zip(first.shape())
                .enumerate()
                .any(|(i, (a, b))| i != axis && a != b)
        {
            return Err(shape_mismatch("concat", first.shape(), s));
        }
        shape[axis] += s[axis];
    }
    let (outer, _, inner) = axis_split(&shape, axis);
    let mut out = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for x in xs {
            let chunk = x.shape()[axis] * inner;
            out.extend_from_slice(&x.value().data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Var::from_op(Tensor::from_parts(shape, out), xs, Concat { axis })
}
