//! Resampling a volume at `x + u(x)`.

use crate::autodiff::{Backward, BackwardCtx, Var};
use crate::error::{shape_mismatch, Error, Result};
use crate::tensor::{Element, Tensor};

use super::field::LabelMap;

/// How sample positions outside the grid are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Positions are clamped to the grid; the clamped coordinate carries no
    /// gradient.
    #[default]
    Clamp,
    /// Corners outside the grid read as zero.
    Zero,
}

/// Linear interpolation taps along one axis.
#[derive(Clone, Copy)]
struct Tap<T> {
    /// Lower corner; the upper is `lo + 1`.
    lo: isize,
    frac: T,
    /// Whether the position moves with the displacement.
    active: bool,
}

fn tap<T: Element>(p: T, n: usize, boundary: Boundary) -> Tap<T> {
    let last = T::of((n - 1) as f64);
    match boundary {
        Boundary::Clamp => {
            let active = p >= T::zero() && p <= last;
            let c = p.max(T::zero()).min(last);
            let lo = c.floor().to_isize().unwrap_or(0).clamp(0, n.saturating_sub(2) as isize);
            Tap {
                lo,
                frac: c - T::of(lo as f64),
                active,
            }
        }
        Boundary::Zero => {
            let lo = p.floor();
            Tap {
                lo: lo.to_isize().unwrap_or(isize::MIN / 2),
                frac: p - lo,
                active: true,
            }
        }
    }
}

#[inline]
fn at(i: isize, n: usize) -> Option<usize> {
    (i >= 0 && (i as usize) < n).then_some(i as usize)
}

struct Corners<T> {
    /// Flat spatial index per corner, `None` when outside the grid.
    index: [Option<usize>; 8],
    weight: [T; 8],
    /// Weight derivative with respect to each axis position.
    dweight: [[T; 8]; 3],
    active: [bool; 3],
}

fn corners<T: Element>(taps: [Tap<T>; 3], ext: [usize; 3]) -> Corners<T> {
    let one = T::one();
    let mut c = Corners {
        index: [None; 8],
        weight: [T::zero(); 8],
        dweight: [[T::zero(); 8]; 3],
        active: taps.map(|t| t.active),
    };
    for k in 0..8 {
        let bits = [(k >> 2) & 1, (k >> 1) & 1, k & 1];
        let mut w = [T::zero(); 3];
        let mut dw = [T::zero(); 3];
        let mut idx = [0usize; 3];
        let mut inside = true;
        for a in 0..3 {
            let t = taps[a];
            if bits[a] == 1 {
                w[a] = t.frac;
                dw[a] = one;
            } else {
                w[a] = one - t.frac;
                dw[a] = -one;
            }
            match at(t.lo + bits[a] as isize, ext[a]) {
                Some(i) => idx[a] = i,
                None => inside = false,
            }
        }
        c.weight[k] = w[0] * w[1] * w[2];
        c.dweight[0][k] = dw[0] * w[1] * w[2];
        c.dweight[1][k] = w[0] * dw[1] * w[2];
        c.dweight[2][k] = w[0] * w[1] * dw[2];
        if inside {
            c.index[k] = Some((idx[0] * ext[1] + idx[1]) * ext[2] + idx[2]);
        }
    }
    c
}

fn check(image: &[usize], u: &[usize]) -> Result<[usize; 3]> {
    if image.len() != 4 || u.len() != 4 || u[0] != 3 || image[1..] != u[1..] {
        return Err(shape_mismatch("warp", image, u));
    }
    Ok([u[1], u[2], u[3]])
}

/// Iterates voxels with their interpolation corners.
fn for_each_voxel<T: Element>(u: &[T], ext: [usize; 3], boundary: Boundary, mut f: impl FnMut(usize, &Corners<T>)) {
    let n: usize = ext.iter().product();
    for x in 0..ext[0] {
        for y in 0..ext[1] {
            for z in 0..ext[2] {
                let v = (x * ext[1] + y) * ext[2] + z;
                let pos = [x, y, z];
                let taps: [Tap<T>; 3] =
                    std::array::from_fn(|a| tap(T::of(pos[a] as f64) + u[a * n + v], ext[a], boundary));
                f(v, &corners(taps, ext));
            }
        }
    }
}

struct Warp {
    boundary: Boundary,
}

impl<T: Element> Backward<T> for Warp {
    fn name(&self) -> &'static str {
        "warp"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let image = ctx.inputs[0].value();
        let u = ctx.inputs[1].value();
        let ext = check(image.shape(), u.shape())?;
        let n: usize = ext.iter().product();
        let channels = image.shape()[0];
        let (img, g) = (image.data(), ctx.grad.data());
        let mut gi = ctx.needs[0].then(|| vec![T::zero(); image.numel()]);
        let mut gu = ctx.needs[1].then(|| vec![T::zero(); u.numel()]);
        for_each_voxel(u.data(), ext, self.boundary, |v, c| {
            for ch in 0..channels {
                let gv = g[ch * n + v];
                if let Some(gi) = gi.as_mut() {
                    for k in 0..8 {
                        if let Some(i) = c.index[k] {
                            gi[ch * n + i] += c.weight[k] * gv;
                        }
                    }
                }
                if let Some(gu) = gu.as_mut() {
                    for a in 0..3 {
                        if !c.active[a] {
                            continue;
                        }
                        let mut d = T::zero();
                        for k in 0..8 {
                            if let Some(i) = c.index[k] {
                                d += c.dweight[a][k] * img[ch * n + i];
                            }
                        }
                        gu[a * n + v] += d * gv;
                    }
                }
            }
        });
        Ok(vec![
            gi.map(|d| Tensor::from_parts(image.shape().to_vec(), d)),
            gu.map(|d| Tensor::from_parts(u.shape().to_vec(), d)),
        ])
    }
}

/// Trilinear resampling of `image: [C][H][W][D]` at `x + u(x)`,
/// differentiable with respect to both the image and `u: [3][H][W][D]`.
pub fn warp<T: Element>(image: &Var<T>, u: &Var<T>, boundary: Boundary) -> Result<Var<T>> {
    let ext = check(image.shape(), u.shape())?;
    let n: usize = ext.iter().product();
    let channels = image.shape()[0];
    let img = image.value().data();
    let mut out = vec![T::zero(); channels * n];
    for_each_voxel(u.value().data(), ext, boundary, |v, c| {
        for ch in 0..channels {
            let mut s = T::zero();
            for k in 0..8 {
                if let Some(i) = c.index[k] {
                    s += c.weight[k] * img[ch * n + i];
                }
            }
            out[ch * n + v] = s;
        }
    });
    Var::from_op(
        Tensor::from_parts(image.shape().to_vec(), out),
        &[image, u],
        Warp { boundary },
    )
}

/// Nearest-neighbour resampling of a label map at `x + u(x)`; positions
/// round half up. Outside the grid, `Clamp` takes the nearest edge label and
/// `Zero` yields background.
pub fn warp_labels(labels: &LabelMap, u: &Tensor<f32>, boundary: Boundary) -> Result<LabelMap> {
    let ext = labels.extents;
    if u.shape() != [3, ext[0], ext[1], ext[2]] {
        return Err(shape_mismatch("warp_labels", u.shape(), &ext));
    }
    let n: usize = ext.iter().product();
    let ud = u.data();
    let mut out = vec![0u16; n];
    for x in 0..ext[0] {
        for y in 0..ext[1] {
            for z in 0..ext[2] {
                let v = (x * ext[1] + y) * ext[2] + z;
                let pos = [x, y, z];
                let mut idx = [0usize; 3];
                let mut inside = true;
                for a in 0..3 {
                    let p = (pos[a] as f64 + ud[a * n + v] as f64 + 0.5).floor();
                    if p < 0.0 || p > (ext[a] - 1) as f64 {
                        inside = false;
                    }
                    idx[a] = p.clamp(0.0, (ext[a] - 1) as f64) as usize;
                }
                out[v] = if inside || boundary == Boundary::Clamp {
                    labels.labels[(idx[0] * ext[1] + idx[1]) * ext[2] + idx[2]]
                } else {
                    0
                };
            }
        }
    }
    LabelMap::new(ext, out).map_err(|_| Error::Config("label warp produced inconsistent grid".into()))
}
