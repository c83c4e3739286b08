//! Non-overlapping cubic regions and the token layouts of the two branches.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::ops::{permute, reshape};
use crate::tensor::Element;

/// Region grid geometry for a `[C][H][W][D]` map split with edge `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionView {
    pub grid: [usize; 3],
    pub region: usize,
    pub channels: usize,
}

impl RegionView {
    pub fn new(shape: &[usize], region: usize) -> Result<Self> {
        if shape.len() != 4 {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: "expected [C][H][W][D]".into(),
            });
        }
        if region == 0 || shape[1..].iter().any(|&e| e % region != 0) {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("spatial extents must be divisible by region size {region}"),
            });
        }
        Ok(RegionView {
            grid: [shape[1] / region, shape[2] / region, shape[3] / region],
            region,
            channels: shape[0],
        })
    }

    /// Number of regions `G`.
    pub fn count(&self) -> usize {
        self.grid.iter().product()
    }

    /// Voxels per region, `R³`.
    pub fn size(&self) -> usize {
        self.region.pow(3)
    }

    fn spatial(&self) -> [usize; 3] {
        self.grid.map(|g| g * self.region)
    }

    /// `[lead][gh][R][gw][R][gd][R]`.
    fn split_shape(&self, lead: &[usize]) -> Vec<usize> {
        let [gh, gw, gd] = self.grid;
        let r = self.region;
        let mut s = lead.to_vec();
        s.extend_from_slice(&[gh, r, gw, r, gd, r]);
        s
    }
}

const SPLIT: [usize; 7] = [1, 3, 5, 2, 4, 6, 0];
const MERGE: [usize; 7] = [6, 0, 3, 1, 4, 2, 5];

/// `[C][H][W][D]` to `[G][R³][C]`; regions and intra-region offsets are both
/// in lexicographic (h, w, d) order.
pub fn region_split<T: Element>(x: &Var<T>, region: usize) -> Result<Var<T>> {
    let view = RegionView::new(x.shape(), region)?;
    let y = reshape(x, &view.split_shape(&[view.channels]))?;
    let y = permute(&y, &SPLIT)?;
    reshape(&y, &[view.count(), view.size(), view.channels])
}

/// Inverse of [`region_split`] for the given region grid.
pub fn region_merge<T: Element>(x: &Var<T>, view: &RegionView) -> Result<Var<T>> {
    if x.shape() != [view.count(), view.size(), view.channels] {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: format!("inconsistent with region grid {:?} of edge {}", view.grid, view.region),
        });
    }
    let [gh, gw, gd] = view.grid;
    let r = view.region;
    let y = reshape(x, &[gh, gw, gd, r, r, r, view.channels])?;
    let y = permute(&y, &MERGE)?;
    let [h, w, d] = view.spatial();
    reshape(&y, &[view.channels, h, w, d])
}

/// Which axis of the region grid the tokens of one attention problem run along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Tokens are the voxels of one region; one problem per (region, head).
    Local,
    /// Tokens are the regions at one intra-region offset; one problem per
    /// (offset, head).
    Global,
}

// Axes of [parts][h][d][gh][r][gw][r][gd][r]:
//          0     1  2  3   4  5   6  7   8
const LOCAL: [usize; 9] = [0, 3, 5, 7, 1, 4, 6, 8, 2];
const GLOBAL: [usize; 9] = [0, 4, 6, 8, 1, 3, 5, 7, 2];

fn inverse(p: &[usize; 9]) -> [usize; 9] {
    let mut inv = [0; 9];
    for (i, &v) in p.iter().enumerate() {
        inv[v] = i;
    }
    inv
}

/// `[parts·h·d][H][W][D]` to `[parts][problems][tokens][d]`. Equivalent to
/// splitting channels into parts, then [`region_split`] and a head
/// partition, done as one permutation.
pub fn to_tokens<T: Element>(x: &Var<T>, view: &RegionView, heads: usize, axis: Axis) -> Result<Var<T>> {
    let c = x.shape()[0];
    let per = view.channels;
    if !c.is_multiple_of(per) || !per.is_multiple_of(heads) {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: format!("channels not a multiple of {per} split into {heads} heads"),
        });
    }
    let parts = c / per;
    let d = per / heads;
    let y = reshape(x, &view.split_shape(&[parts, heads, d]))?;
    let (perm, problems, tokens) = match axis {
        Axis::Local => (LOCAL, view.count() * heads, view.size()),
        Axis::Global => (GLOBAL, view.size() * heads, view.count()),
    };
    let y = permute(&y, &perm)?;
    reshape(&y, &[parts, problems, tokens, d])
}

/// Inverse of [`to_tokens`] for one part: `[problems][tokens][d]` to `[C][H][W][D]`.
pub fn from_tokens<T: Element>(x: &Var<T>, view: &RegionView, heads: usize, axis: Axis) -> Result<Var<T>> {
    let d = view.channels / heads;
    let [gh, gw, gd] = view.grid;
    let r = view.region;
    let (perm, shape) = match axis {
        Axis::Local => (LOCAL, [1, gh, gw, gd, heads, r, r, r, d]),
        Axis::Global => (GLOBAL, [1, r, r, r, heads, gh, gw, gd, d]),
    };
    let y = reshape(x, &shape)?;
    let y = permute(&y, &inverse(&perm))?;
    let [h, w, dd] = view.spatial();
    reshape(&y, &[view.channels, h, w, dd])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn region_count_and_round_trip() {
        let x = Var::constant(Tensor::<f64>::from_fn(&[3, 8, 8, 8], |i| i as f64));
        let s = region_split(&x, 4).unwrap();
        assert_eq!(s.shape(), &[8, 64, 3]);
        let view = RegionView::new(x.shape(), 4).unwrap();
        let m = region_merge(&s, &view).unwrap();
        assert!(m.value().bit_eq(x.value()));
    }

    #[test]
    fn voxel_lands_at_lexicographic_region_and_offset() {
        // Channel 0 holds the flat voxel index.
        let x = Var::constant(Tensor::<f64>::from_fn(&[1, 8, 8, 8], |i| i as f64));
        let s = region_split(&x, 4).unwrap();
        let flat = (5 * 8 + 1) * 8;
        // Region (1,0,0) -> 4; offset (1,1,0) -> 1*16 + 1*4 + 0 = 20.
        assert_eq!(s.value().get(&[4, 20, 0]), flat as f64);
        for h in 0..8 {
            for w in 0..8 {
                for d in 0..8 {
                    let g = ((h / 4) * 2 + w / 4) * 2 + d / 4;
                    let r = ((h % 4) * 4 + w % 4) * 4 + d % 4;
                    assert_eq!(s.value().get(&[g, r, 0]), ((h * 8 + w) * 8 + d) as f64);
                }
            }
        }
    }

    #[test]
    fn single_region_is_plain_reshape() {
        let x = Var::constant(Tensor::<f64>::from_fn(&[1, 4, 4, 4], |i| i as f64));
        let s = region_split(&x, 4).unwrap();
        assert_eq!(s.shape(), &[1, 64, 1]);
        assert_eq!(s.value().data(), x.value().data());
    }

    #[test]
    fn rejects_indivisible_extent() {
        let x = Var::constant(Tensor::<f64>::zeros(&[1, 6, 8, 8]));
        assert!(region_split(&x, 4).is_err());
        let view = RegionView::new(&[1, 8, 8, 8], 4).unwrap();
        let bad = Var::constant(Tensor::<f64>::zeros(&[8, 63, 1]));
        assert!(region_merge(&bad, &view).is_err());
    }

    #[test]
    fn token_layouts_match_split_then_head_partition() {
        let (c, heads) = (6, 2);
        let d = c / heads;
        let x = Var::constant(Tensor::<f64>::from_fn(&[2 * c, 4, 6, 2], |i| (i as f64).sin()));
        let view = RegionView::new(&[c, 4, 6, 2], 2).unwrap();
        let tokens = to_tokens(&x, &view, heads, Axis::Local).unwrap();
        let global = to_tokens(&x, &view, heads, Axis::Global).unwrap();
        for part in 0..2 {
            let xp = crate::ops::narrow(&x, 0, part * c, c).unwrap();
            let s = region_split(&xp, 2).unwrap();
            let (g, n) = (view.count(), view.size());
            for gi in 0..g {
                for r in 0..n {
                    for h in 0..heads {
                        for j in 0..d {
                            let v = s.value().get(&[gi, r, h * d + j]);
                            assert_eq!(tokens.value().get(&[part, gi * heads + h, r, j]), v);
                            assert_eq!(global.value().get(&[part, r * heads + h, gi, j]), v);
                        }
                    }
                }
            }
            for axis in [Axis::Local, Axis::Global] {
                let t = to_tokens(&x, &view, heads, axis).unwrap();
                let one = crate::ops::narrow(&t, 0, part, 1).unwrap();
                let back = from_tokens(&one, &view, heads, axis).unwrap();
                assert!(back.value().bit_eq(xp.value()));
            }
        }
    }
}
