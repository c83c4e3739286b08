//! Synthetic registration pairs with a known, fold-free deformation.
//!
//! The moving image is a sum of anisotropic Gaussian blobs whose supports
//! define the labels. A random displacement on a coarse control grid,
//! upsampled trilinearly, warps it into the fixed image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::metrics::njd_percent;
use crate::regnet::{warp, warp_labels, Boundary, DisplacementField, LabelMap, Volume};
use crate::tensor::Tensor;

/// Blob peaks above this fraction of their maximum are labelled.
const LABEL_LEVEL: f64 = 0.5;
const BUMPS_PER_LABEL: usize = 2;
/// Unlabelled blobs that add texture to the background.
const TEXTURE_BUMPS: usize = 192;
/// Smoothing passes over the control grid. Correlated control points keep
/// the displacement magnitude while lowering the field's gradients.
const CONTROL_SMOOTHING: usize = 4;
pub const MAX_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub extents: [usize; 3],
    /// Foreground labels; background is 0.
    pub labels: usize,
    /// Control point spacing in voxels.
    pub spacing: usize,
    /// Largest displacement of any control point, per component.
    pub amplitude: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            extents: [32; 3],
            labels: 2,
            spacing: 8,
            amplitude: 4.0,
            noise: 0.02,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.extents.iter().any(|&e| e < 3) {
            return Err(Error::Config(format!("extents {:?} must be at least 3", self.extents)));
        }
        if self.labels == 0 || self.labels > u16::MAX as usize {
            return Err(Error::Config(format!("label count {} out of range", self.labels)));
        }
        if self.spacing == 0 {
            return Err(Error::Config("control point spacing must be positive".into()));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) || !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(
                "amplitude and noise must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthPair {
    pub fixed: Volume,
    pub moving: Volume,
    pub labels_fixed: LabelMap,
    pub labels_moving: LabelMap,
    /// Maps fixed to moving: `fixed(x) ≈ moving(x + u(x))`.
    pub u_true: DisplacementField,
}

struct Bump {
    center: [f64; 3],
    inv_sigma: [f64; 3],
}

impl Bump {
    /// Center within `span` of the grid, width a `width` fraction of it.
    fn random(ext: [usize; 3], span: (f64, f64), width: (f64, f64), rng: &mut impl Rng) -> Bump {
        Bump {
            center: ext.map(|e| rng.random_range(span.0..span.1) * (e - 1) as f64),
            inv_sigma: ext.map(|e| 1.0 / (rng.random_range(width.0..width.1) * e as f64)),
        }
    }

    fn at(&self, p: [f64; 3]) -> f64 {
        let q: f64 = (0..3)
            .map(|a| ((p[a] - self.center[a]) * self.inv_sigma[a]).powi(2))
            .sum();
        (-0.5 * q).exp()
    }
}

fn positions(ext: [usize; 3]) -> impl Iterator<Item = [f64; 3]> {
    (0..ext[0])
        .flat_map(move |x| (0..ext[1]).flat_map(move |y| (0..ext[2]).map(move |z| [x as f64, y as f64, z as f64])))
}

fn blobs(spec: &SynthSpec, rng: &mut impl Rng) -> (Vec<f32>, Vec<u16>) {
    let ext = spec.extents;
    let labelled: Vec<(f64, Vec<Bump>)> = (0..spec.labels)
        .map(|_| {
            let contrast = rng.random_range(0.5..1.0);
            (
                contrast,
                (0..BUMPS_PER_LABEL)
                    .map(|_| Bump::random(ext, (0.25, 0.75), (0.07, 0.15), rng))
                    .collect(),
            )
        })
        .collect();
    let texture: Vec<(f64, Bump)> = (0..TEXTURE_BUMPS)
        .map(|_| {
            let c = rng.random_range(0.1..0.35);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (sign * c, Bump::random(ext, (0.0, 1.0), (0.05, 0.1), rng))
        })
        .collect();
    let mut image = Vec::with_capacity(ext.iter().product());
    let mut labels = Vec::with_capacity(image.capacity());
    for p in positions(ext) {
        let mut value: f64 = texture.iter().map(|(c, b)| c * b.at(p)).sum();
        let (mut best, mut label) = (LABEL_LEVEL, 0u16);
        for (l, (contrast, bumps)) in labelled.iter().enumerate() {
            let f = bumps.iter().map(|b| b.at(p)).fold(0.0, f64::max);
            value += contrast * f;
            if f > best {
                best = f;
                label = l as u16 + 1;
            }
        }
        image.push(value as f32);
        labels.push(label);
    }
    (image, labels)
}

/// One [1, 2, 1] / 4 pass along `axis` of a control grid, edges replicated.
fn smooth_axis(grid: &mut [f64], cp: [usize; 3], axis: usize) {
    let src = grid.to_vec();
    let stride = [cp[1] * cp[2], cp[2], 1][axis];
    for (i, v) in grid.iter_mut().enumerate() {
        let pos = i / stride % cp[axis];
        let lo = if pos > 0 { src[i - stride] } else { src[i] };
        let hi = if pos + 1 < cp[axis] { src[i + stride] } else { src[i] };
        *v = 0.25 * lo + 0.5 * src[i] + 0.25 * hi;
    }
}

/// Control displacements: Gaussian draws, spatially correlated by repeated
/// smoothing across the control grid, rescaled to root-mean-square
/// `amplitude / 2` and clamped to `±amplitude`, then interpolated
/// trilinearly onto the grid.
fn control_field(spec: &SynthSpec, rng: &mut impl Rng) -> Tensor<f32> {
    let ext = spec.extents;
    let s = spec.spacing;
    let cp = ext.map(|e| (e - 1).div_ceil(s) + 1);
    let count = cp[0] * cp[1] * cp[2];
    let a = spec.amplitude;
    let draw = Normal::new(0.0, (a / 2.0).max(f64::MIN_POSITIVE)).expect("finite std");
    let mut ctrl: Vec<f64> = (0..3 * count)
        .map(|_| if a == 0.0 { 0.0 } else { draw.sample(rng) })
        .collect();
    if a > 0.0 {
        for component in ctrl.chunks_mut(count) {
            for _ in 0..CONTROL_SMOOTHING {
                for axis in 0..3 {
                    smooth_axis(component, cp, axis);
                }
            }
        }
        let rms = (ctrl.iter().map(|v| v * v).sum::<f64>() / ctrl.len() as f64).sqrt();
        ctrl.iter_mut().for_each(|v| *v = (*v * (a / 2.0) / rms).clamp(-a, a));
    }
    let n: usize = ext.iter().product();
    let mut u = vec![0.0f32; 3 * n];
    for (v, p) in positions(ext).enumerate() {
        let mut lo = [0usize; 3];
        let mut t = [0.0f64; 3];
        for k in 0..3 {
            let g = p[k] / s as f64;
            lo[k] = (g.floor() as usize).min(cp[k] - 2);
            t[k] = g - lo[k] as f64;
        }
        for c in 0..3 {
            let mut acc = 0.0;
            for corner in 0..8 {
                let b = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
                let w: f64 = (0..3).map(|k| if b[k] == 1 { t[k] } else { 1.0 - t[k] }).product();
                let i = ((lo[0] + b[0]) * cp[1] + lo[1] + b[1]) * cp[2] + lo[2] + b[2];
                acc += w * ctrl[c * count + i];
            }
            u[c * n + v] = acc as f32;
        }
    }
    Tensor::new(&[3, ext[0], ext[1], ext[2]], u).expect("field length")
}

fn add_noise(v: &Tensor<f32>, std: f64, rng: &mut impl Rng) -> Tensor<f32> {
    if std == 0.0 {
        return v.clone();
    }
    let noise = Normal::new(0.0, std).expect("finite std");
    let data = v.data().iter().map(|&x| x + noise.sample(rng) as f32).collect();
    Tensor::new(v.shape(), data).expect("same length")
}

/// Generates one pair; a pure function of `spec`. Folding fields are
/// redrawn up to [`MAX_ATTEMPTS`] times.
pub fn gen_pair(spec: &SynthSpec) -> Result<SynthPair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ext = spec.extents;
    let (image, labels) = blobs(spec, &mut rng);
    let moving = Tensor::new(&[1, ext[0], ext[1], ext[2]], image)?;
    let labels_moving = LabelMap::new(ext, labels)?;
    let u = (0..MAX_ATTEMPTS)
        .map(|_| control_field(spec, &mut rng))
        .find(|u| njd_percent(u).is_ok_and(|p| p == 0.0))
        .ok_or(Error::FoldDetected(MAX_ATTEMPTS))?;
    let fixed = warp(
        &Var::constant(moving.clone()),
        &Var::constant(u.clone()),
        Boundary::Clamp,
    )?;
    let labels_fixed = warp_labels(&labels_moving, &u, Boundary::Clamp)?;
    let fixed = Volume::new(add_noise(fixed.value(), spec.noise, &mut rng))?.min_max_normalized();
    let moving = Volume::new(add_noise(&moving, spec.noise, &mut rng))?.min_max_normalized();
    Ok(SynthPair {
        fixed,
        moving,
        labels_fixed,
        labels_moving,
        u_true: DisplacementField::new(u)?,
    })
}
