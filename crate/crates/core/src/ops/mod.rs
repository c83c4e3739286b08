//! Differentiable tensor primitives.

mod elementwise;
mod layout;
mod linalg;

pub use elementwise::{add, add_scalar, div, mean, mul, neg, scale, square, sub, sum};
pub use layout::{concat, narrow, permute, permute_tensor, reshape, split};
pub use linalg::{l2_normalize, matmul, matmul_tensor, softmax, softmax_owned, transpose_last};

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> crate::Result<()> {
    if axis >= shape.len() {
        return Err(crate::Error::InvalidAxis {
            op,
            axis,
            rank: shape.len(),
        });
    }
    Ok(())
}
