//! Cross-covariance attention and the dense token-to-token reference.

use crate::autodiff::{Backward, BackwardCtx, Var};
use crate::error::{shape_mismatch, Error, Result};
use crate::ops::{l2_normalize, matmul, scale, softmax, softmax_owned, transpose_last};
use crate::tensor::{Element, Tensor};

/// Floor on token-axis norms before normalization.
pub const NORM_EPS: f64 = 1e-12;

fn check_qkv<T: Element>(q: &Var<T>, k: &Var<T>, v: &Var<T>) -> Result<()> {
    if q.shape().len() != 3 {
        return Err(Error::InvalidShape {
            shape: q.shape().to_vec(),
            reason: "expected [B][N][d]".into(),
        });
    }
    for other in [k, v] {
        if other.shape() != q.shape() {
            return Err(shape_mismatch("attend", q.shape(), other.shape()));
        }
    }
    Ok(())
}

struct HeadScale;

impl<T: Element> Backward<T> for HeadScale {
    fn name(&self) -> &'static str {
        "head_scale"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let x = ctx.inputs[0].value();
        let tau = ctx.inputs[1].value().data();
        let g = ctx.grad.data();
        let per = x.numel() / x.shape()[0];
        let gx = ctx.needs[0].then(|| {
            let data = g
                .chunks_exact(per)
                .enumerate()
                .flat_map(|(b, gb)| gb.iter().map(move |&v| v * tau[b % tau.len()]))
                .collect();
            Tensor::from_parts(x.shape().to_vec(), data)
        });
        let gt = ctx.needs[1].then(|| {
            let mut out = vec![T::zero(); tau.len()];
            for (b, (gb, xb)) in g.chunks_exact(per).zip(x.data().chunks_exact(per)).enumerate() {
                out[b % tau.len()] += gb.iter().zip(xb).map(|(&a, &c)| a * c).sum();
            }
            Tensor::from_parts(vec![tau.len()], out)
        });
        Ok(vec![gx, gt])
    }
}

/// Multiplies batch slice `b` of `x` by `tau[b % heads]`.
pub fn head_scale<T: Element>(x: &Var<T>, tau: &Var<T>) -> Result<Var<T>> {
    let heads = tau.shape().first().copied().unwrap_or(0);
    if tau.shape().len() != 1 || x.shape().is_empty() || !x.shape()[0].is_multiple_of(heads) {
        return Err(shape_mismatch("head_scale", x.shape(), tau.shape()));
    }
    let per = x.value().numel() / x.shape()[0];
    let t = tau.value().data();
    let data = x
        .value()
        .data()
        .chunks_exact(per)
        .enumerate()
        .flat_map(|(b, xb)| xb.iter().map(move |&v| v * t[b % heads]))
        .collect();
    Var::from_op(Tensor::from_parts(x.shape().to_vec(), data), &[x, tau], HeadScale)
}

/// Cross-covariance of normalized keys and queries: `S[b][i][j] =
/// sum_n k[b][n][i] q[b][n][j]`, one `d x d` map per problem.
pub fn xca_covariance_map<T: Element>(q_hat: &Var<T>, k_hat: &Var<T>) -> Result<Var<T>> {
    matmul(&transpose_last(k_hat)?, q_hat)
}

/// Cross-covariance attention over `B` independent problems of `N` tokens and
/// `d` channels. Queries and keys are normalized along the token axis; the
/// `d x d` map `softmax_i(tau * S)` has columns summing to one and mixes value
/// channels: `y[n][j] = sum_i v[n][i] a[i][j]`. Problem `b` uses
/// `tau[b % tau.len()]`.
pub fn xca_attend<T: Element>(q: &Var<T>, k: &Var<T>, v: &Var<T>, tau: &Var<T>) -> Result<Var<T>> {
    check_qkv(q, k, v)?;
    matmul(v, &xca_weights(q, k, tau)?)
}

/// The `[B][d][d]` attention maps of [`xca_attend`].
pub fn xca_weights<T: Element>(q: &Var<T>, k: &Var<T>, tau: &Var<T>) -> Result<Var<T>> {
    check_qkv(q, k, k)?;
    let eps = T::of(NORM_EPS);
    let q_hat = l2_normalize(q, 1, eps)?;
    let k_hat = l2_normalize(k, 1, eps)?;
    let s = xca_covariance_map(&q_hat, &k_hat)?;
    drop((q_hat, k_hat));
    softmax_owned(head_scale(&s, tau)?, 1)
}

/// Scaled dot-product attention: `softmax_m(q[n] . k[m] / sqrt(d))` weights
/// over all `N` tokens, rows summing to one.
pub fn sa_attend<T: Element>(q: &Var<T>, k: &Var<T>, v: &Var<T>) -> Result<Var<T>> {
    check_qkv(q, k, v)?;
    let d = q.shape()[2];
    let qs = scale(q, T::of(1.0 / (d as f64).sqrt()))?;
    let s = matmul(&qs, &transpose_last(k)?)?;
    drop(qs);
    let a = softmax_owned(s, 2)?;
    matmul(&a, v)
}

/// Attention weights of [`sa_attend`], for inspection.
pub fn sa_weights<T: Element>(q: &Var<T>, k: &Var<T>) -> Result<Var<T>> {
    let d = q.shape()[2];
    let s = matmul(&scale(q, T::of(1.0 / (d as f64).sqrt()))?, &transpose_last(k)?)?;
    softmax(&s, 2)
}
