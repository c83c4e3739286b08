use crate::autodiff::{Backward, BackwardCtx, Var};
use crate::error::{shape_mismatch, Error, Result};
use crate::ops::{axis_split, check_axis, permute};
use crate::tensor::{Element, Tensor};

/// Batched `C = A·B` (or `C += A·B` when `accumulate`). `A` is logically
/// `m×k`, stored transposed when `a_t`; likewise `B` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_batched<T: Element>(
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    accumulate: bool,
) {
    let (rsa, csa) = if a_t { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_t { (1, k) } else { (n, 1) };
    for bi in 0..batch {
        let a = &a[bi * m * k..(bi + 1) * m * k];
        let b = &b[bi * k * n..(bi + 1) * k * n];
        let c = &mut c[bi * m * n..(bi + 1) * m * n];
        if m * n * k <= 512 {
            for i in 0..m {
                for j in 0..n {
                    let mut s = T::zero();
                    for p in 0..k {
                        s += a[i * rsa + p * csa] * b[p * rsb + j * csb];
                    }
                    if accumulate {
                        c[i * n + j] += s;
                    } else {
                        c[i * n + j] = s;
                    }
                }
            }
        } else {
            let beta = if accumulate { T::one() } else { T::zero() };
            // SAFETY: slices above bound every access described by the
            // extents and strides; `c` is a distinct mutable slice.
            unsafe {
                T::gemm(
                    m,
                    k,
                    n,
                    T::one(),
                    a.as_ptr(),
                    rsa as isize,
                    csa as isize,
                    b.as_ptr(),
                    rsb as isize,
                    csb as isize,
                    beta,
                    c.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
    }
}

struct MatmulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(MatmulDims, Vec<usize>)> {
    let r = a.len();
    if r < 2 || b.len() != r || a[..r - 2] != b[..r - 2] || a[r - 1] != b[r - 2] {
        return Err(shape_mismatch("matmul", a, b));
    }
    let mut out = a[..r - 1].to_vec();
    out.push(b[r - 1]);
    Ok((
        MatmulDims {
            batch: a[..r - 2].iter().product(),
            m: a[r - 2],
            k: a[r - 1],
            n: b[r - 1],
        },
        out,
    ))
}

/// Batched matrix product on raw tensors.
pub fn matmul_tensor<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (d, shape) = matmul_dims(a.shape(), b.shape())?;
    let mut out = vec![T::zero(); d.batch * d.m * d.n];
    gemm_batched(
        d.batch,
        d.m,
        d.k,
        d.n,
        a.data(),
        false,
        b.data(),
        false,
        &mut out,
        false,
    );
    Ok(Tensor::from_parts(shape, out))
}

struct Matmul;

impl<T: Element> Backward<T> for Matmul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let a = ctx.inputs[0].value();
        let b = ctx.inputs[1].value();
        let (d, _) = matmul_dims(a.shape(), b.shape())?;
        let g = ctx.grad.data();
        let ga = ctx.needs[0].then(|| {
            let mut out = vec![T::zero(); a.numel()];
            gemm_batched(d.batch, d.m, d.n, d.k, g, false, b.data(), true, &mut out, false);
            Tensor::from_parts(a.shape().to_vec(), out)
        });
        let gb = ctx.needs[1].then(|| {
            let mut out = vec![T::zero(); b.numel()];
            gemm_batched(d.batch, d.k, d.m, d.n, a.data(), true, g, false, &mut out, false);
            Tensor::from_parts(b.shape().to_vec(), out)
        });
        Ok(vec![ga, gb])
    }
}

/// `[..., M, K] · [..., K, N] -> [..., M, N]` with equal leading extents.
pub fn matmul<T: Element>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    Var::from_op(matmul_tensor(a.value(), b.value())?, &[a, b], Matmul)
}

/// Swaps the last two axes.
pub fn transpose_last<T: Element>(x: &Var<T>) -> Result<Var<T>> {
    let r = x.shape().len();
    if r < 2 {
        return Err(Error::InvalidAxis {
            op: "transpose_last",
            axis: 1,
            rank: r,
        });
    }
    let mut perm: Vec<usize> = (0..r).collect();
    perm.swap(r - 1, r - 2);
    permute(x, &perm)
}

fn softmax_in_place<T: Element>(data: &mut [T], shape: &[usize], axis: usize) {
    let (outer, extent, inner) = axis_split(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * extent * inner + i;
            let mut max = T::neg_infinity();
            for j in 0..extent {
                max = max.max(data[base + j * inner]);
            }
            let mut total = T::zero();
            for j in 0..extent {
                let e = (data[base + j * inner] - max).exp();
                data[base + j * inner] = e;
                total += e;
            }
            let inv = T::one() / total;
            for j in 0..extent {
                data[base + j * inner] *= inv;
            }
        }
    }
}

struct Softmax {
    axis: usize,
}

impl<T: Element> Backward<T> for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let y = ctx.output.data();
        let g = ctx.grad.data();
        let (outer, extent, inner) = axis_split(ctx.output.shape(), self.axis);
        let mut out = vec![T::zero(); y.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * extent * inner + i;
                let mut dot = T::zero();
                for j in 0..extent {
                    dot += g[base + j * inner] * y[base + j * inner];
                }
                for j in 0..extent {
                    let p = base + j * inner;
                    out[p] = y[p] * (g[p] - dot);
                }
            }
        }
        Ok(vec![Some(Tensor::from_parts(ctx.output.shape().to_vec(), out))])
    }
}

/// Max-shifted exponential normalization along `axis`.
pub fn softmax<T: Element>(x: &Var<T>, axis: usize) -> Result<Var<T>> {
    check_axis("softmax", x.shape(), axis)?;
    let mut data = x.value().to_vec();
    softmax_in_place(&mut data, x.shape(), axis);
    Var::from_op(Tensor::from_parts(x.shape().to_vec(), data), &[x], Softmax { axis })
}

/// Like [`softmax`], but reuses the input buffer when `x` is an unrecorded
/// value with no other owners, so inference holds a single copy of the map.
pub fn softmax_owned<T: Element>(x: Var<T>, axis: usize) -> Result<Var<T>> {
    if x.requires_grad() {
        return softmax(&x, axis);
    }
    check_axis("softmax", x.shape(), axis)?;
    let value = x.into_value();
    let shape = value.shape().to_vec();
    let mut data = value.into_vec();
    softmax_in_place(&mut data, &shape, axis);
    Ok(Var::constant(Tensor::from_parts(shape, data)))
}

struct L2Normalize<T> {
    axis: usize,
    eps: T,
}

impl<T: Element> Backward<T> for L2Normalize<T> {
    fn name(&self) -> &'static str {
        "l2_normalize"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let x = ctx.inputs[0].value().data();
        let y = ctx.output.data();
        let g = ctx.grad.data();
        let (outer, extent, inner) = axis_split(ctx.output.shape(), self.axis);
        let mut out = vec![T::zero(); y.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * extent * inner + i;
                let mut sq = T::zero();
                let mut dot = T::zero();
                for j in 0..extent {
                    let p = base + j * inner;
                    sq += x[p] * x[p];
                    dot += y[p] * g[p];
                }
                let norm = sq.sqrt();
                for j in 0..extent {
                    let p = base + j * inner;
                    out[p] = if norm >= self.eps {
                        (g[p] - y[p] * dot) / norm
                    } else {
                        g[p] / self.eps
                    };
                }
            }
        }
        Ok(vec![Some(Tensor::from_parts(ctx.output.shape().to_vec(), out))])
    }
}

/// Scales each vector along `axis` to unit Euclidean norm; vectors shorter
/// than `eps` are divided by `eps` instead.
pub fn l2_normalize<T: Element>(x: &Var<T>, axis: usize, eps: T) -> Result<Var<T>> {
    check_axis("l2_normalize", x.shape(), axis)?;
    if eps <= T::zero() {
        return Err(Error::Config("l2_normalize eps must be positive".into()));
    }
    let data = x.value().data();
    let (outer, extent, inner) = axis_split(x.shape(), axis);
    let mut out = vec![T::zero(); data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * extent * inner + i;
            let sq: T = (0..extent).map(|j| data[base + j * inner].powi(2)).sum();
            let inv = T::one() / sq.sqrt().max(eps);
            for j in 0..extent {
                out[base + j * inner] = data[base + j * inner] * inv;
            }
        }
    }
    Var::from_op(
        Tensor::from_parts(x.shape().to_vec(), out),
        &[x],
        L2Normalize { axis, eps },
    )
}
