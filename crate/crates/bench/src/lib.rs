//! Shared fixtures for the criterion benchmarks.

use maxca_core::{Tensor, Var};

/// Deterministic values in `[-1, 1]` without pulling in a random source.
pub fn input(shape: &[usize], phase: f64) -> Var<f32> {
    Var::constant(Tensor::from_fn(shape, |i| {
        ((i as f64 * 0.618_034 + phase).sin()) as f32
    }))
}

/// A trainable leaf with the same values as [`input`].
pub fn param(shape: &[usize], phase: f64) -> Var<f32> {
    Var::param(input(shape, phase).value().clone())
}

/// Query, key and value tensors `[B][N][d]`.
pub fn qkv(batch: usize, tokens: usize, dim: usize) -> [Var<f32>; 3] {
    [0.1, 0.2, 0.3].map(|p| input(&[batch, tokens, dim], p))
}
