//! Image volumes, label maps and displacement fields.

use crate::error::{shape_mismatch, Error, Result};
use crate::tensor::Tensor;

/// Intensities `[C][H][W][D]`; images have one channel.
#[derive(Debug, Clone)]
pub struct Volume {
    pub data: Tensor<f32>,
}

impl Volume {
    pub fn new(data: Tensor<f32>) -> Result<Self> {
        if data.rank() != 4 {
            return Err(Error::InvalidShape {
                shape: data.shape().to_vec(),
                reason: "volume must be [C][H][W][D]".into(),
            });
        }
        Ok(Volume { data })
    }

    pub fn extents(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[1], s[2], s[3]]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    /// Rescales all values to `[0, 1]`; a constant volume maps to zeros.
    pub fn min_max_normalized(&self) -> Volume {
        let (lo, hi) = self
            .data
            .data()
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let span = hi - lo;
        let data = self.data.map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 });
        Volume { data }
    }
}

/// Integer labels over a 3D grid, `[H][W][D]` order; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub extents: [usize; 3],
    pub labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(extents: [usize; 3], labels: Vec<u16>) -> Result<Self> {
        if labels.len() != extents.iter().product::<usize>() || extents.contains(&0) {
            return Err(Error::InvalidShape {
                shape: extents.to_vec(),
                reason: format!("{} labels do not fill the grid", labels.len()),
            });
        }
        Ok(LabelMap { extents, labels })
    }

    /// Sorted distinct labels, background included if present.
    pub fn label_set(&self) -> Vec<u16> {
        let mut s = self.labels.clone();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Per-voxel displacement in voxel units, `[3][H][W][D]`; component `a`
/// moves along spatial axis `a`.
#[derive(Debug, Clone)]
pub struct DisplacementField {
    pub u: Tensor<f32>,
}

impl DisplacementField {
    pub fn new(u: Tensor<f32>) -> Result<Self> {
        let s = u.shape();
        if s.len() != 4 || s[0] != 3 {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: "displacement field must be [3][H][W][D]".into(),
            });
        }
        if !u.all_finite() {
            return Err(Error::NonFinite {
                op: "displacement field",
            });
        }
        Ok(DisplacementField { u })
    }

    pub fn zeros(extents: [usize; 3]) -> Self {
        DisplacementField {
            u: Tensor::zeros(&[3, extents[0], extents[1], extents[2]]),
        }
    }

    pub fn extents(&self) -> [usize; 3] {
        let s = self.u.shape();
        [s[1], s[2], s[3]]
    }

    pub fn check_matches(&self, extents: [usize; 3]) -> Result<()> {
        if self.extents() != extents {
            return Err(shape_mismatch("displacement field", &self.extents(), &extents));
        }
        Ok(())
    }
}
