use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::conv::conv3d;
use crate::nn::params::{uniform_fan_in, ParamId, ParamStore, Params};
use crate::ops::{permute, reshape};
use crate::tensor::Element;

/// Gathers each 2x2x2 neighborhood into channels: `[C][H][W][D] ->
/// [8C][H/2][W/2][D/2]`. Output channel `o * C + c` holds channel `c` at
/// offset `o = (dh * 2 + dw) * 2 + dd`.
pub fn space_to_depth<T: Element>(x: &Var<T>) -> Result<Var<T>> {
    let s = x.shape();
    if s.len() != 4 || s[1..].iter().any(|e| e % 2 != 0) {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "patch merging needs even spatial extents".into(),
        });
    }
    let (c, h, w, d) = (s[0], s[1] / 2, s[2] / 2, s[3] / 2);
    let y = reshape(x, &[c, h, 2, w, 2, d, 2])?;
    let y = permute(&y, &[2, 4, 6, 0, 1, 3, 5])?;
    reshape(&y, &[8 * c, h, w, d])
}

/// 2x spatial downsampling: 2x2x2 concatenation then an `8C -> C_out` linear
/// projection given as a pointwise kernel `[C_out][8C][1][1][1]`.
pub fn patch_merging<T: Element>(x: &Var<T>, proj: &Var<T>) -> Result<Var<T>> {
    conv3d(&space_to_depth(x)?, proj, None, 1, 0)
}

#[derive(Debug, Clone)]
pub struct PatchMerging {
    pub proj: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl PatchMerging {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
    ) -> Self {
        let proj = store.add(
            format!("{name}.proj"),
            uniform_fan_in(&[c_out, 8 * c_in, 1, 1, 1], 8 * c_in, rng),
        );
        PatchMerging { proj, c_in, c_out }
    }

    pub fn forward<T: Element>(&self, p: &Params<T>, x: &Var<T>) -> Result<Var<T>> {
        patch_merging(x, p.get(self.proj))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn shapes_and_constant_preservation() {
        let x = Var::constant(Tensor::<f64>::full(&[3, 4, 4, 4], 2.5));
        // Weights of each neighborhood offset sum to 1/8, so rows sum to 1.
        let proj = Var::constant(Tensor::full(&[6, 24, 1, 1, 1], 1.0 / 24.0));
        let y = patch_merging(&x, &proj).unwrap();
        assert_eq!(y.shape(), &[6, 2, 2, 2]);
        for &v in y.value().data() {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn gathers_neighborhood_offsets() {
        let x = Var::constant(Tensor::<f64>::from_fn(&[1, 2, 2, 2], |i| i as f64));
        let y = space_to_depth(&x).unwrap();
        assert_eq!(y.shape(), &[8, 1, 1, 1]);
        assert_eq!(y.value().data(), &[0., 1., 2., 3., 4., 5., 6., 7.]);
    }

    #[test]
    fn odd_extent_is_error() {
        let x = Var::constant(Tensor::<f64>::zeros(&[1, 3, 2, 2]));
        assert!(space_to_depth(&x).is_err());
    }
}
