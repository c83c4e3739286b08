//! Unsupervised registration loss: local normalized cross-correlation plus a
//! diffusion penalty on the displacement field.

use crate::autodiff::{Backward, BackwardCtx, Var};
use crate::error::{shape_mismatch, Error, Result};
use crate::ops::{add, scale};
use crate::tensor::{Element, Tensor};

use super::warp::{warp, Boundary};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Edge of the cubic NCC window, odd.
    pub window: usize,
    /// Weight of the diffusion term.
    pub sigma: f64,
    /// Added to the NCC denominator.
    pub eps: f64,
    pub boundary: Boundary,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            window: 9,
            sigma: 1.0,
            eps: 1e-5,
            boundary: Boundary::Clamp,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "NCC window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::Config(format!(
                "sigma must be finite and >= 0, got {}",
                self.sigma
            )));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config(format!("NCC eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Sums over the cubic window of radius `r` around each voxel, truncated at
/// the grid boundary.
fn box_sum<T: Element>(src: &[T], ext: [usize; 3], r: usize) -> Vec<T> {
    let mut cur = src.to_vec();
    let mut next = vec![T::zero(); src.len()];
    let strides = [ext[1] * ext[2], ext[2], 1];
    for a in 0..3 {
        let (n, s) = (ext[a], strides[a]);
        let bases = (0..src.len() / (n * s)).flat_map(|o| (0..s).map(move |i| o * n * s + i));
        for base in bases {
            for i in 0..n {
                let lo = i.saturating_sub(r);
                let hi = (i + r).min(n - 1);
                let mut acc = T::zero();
                for j in lo..=hi {
                    acc += cur[base + j * s];
                }
                next[base + i * s] = acc;
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Voxels in each truncated window.
fn window_counts(ext: [usize; 3], r: usize) -> Vec<f64> {
    let axis = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|i| ((i + r).min(n - 1) - i.saturating_sub(r) + 1) as f64)
            .collect()
    };
    let (ch, cw, cd) = (axis(ext[0]), axis(ext[1]), axis(ext[2]));
    let mut out = Vec::with_capacity(ext.iter().product());
    for x in &ch {
        for y in &cw {
            for z in &cd {
                out.push(x * y * z);
            }
        }
    }
    out
}

/// Windowed moments of one channel pair.
struct Moments<T> {
    count: Vec<f64>,
    si: Vec<T>,
    sj: Vec<T>,
    sii: Vec<T>,
    sjj: Vec<T>,
    sij: Vec<T>,
}

impl<T: Element> Moments<T> {
    fn new(a: &[T], b: &[T], ext: [usize; 3], r: usize) -> Self {
        let prod = |f: &dyn Fn(usize) -> T| -> Vec<T> { (0..a.len()).map(f).collect() };
        Moments {
            count: window_counts(ext, r),
            si: box_sum(a, ext, r),
            sj: box_sum(b, ext, r),
            sii: box_sum(&prod(&|i| a[i] * a[i]), ext, r),
            sjj: box_sum(&prod(&|i| b[i] * b[i]), ext, r),
            sij: box_sum(&prod(&|i| a[i] * b[i]), ext, r),
        }
    }

    /// `(cross, var_a, var_b)` at voxel `v`.
    fn centered(&self, v: usize) -> (T, T, T) {
        let n = T::of(self.count[v]);
        let (si, sj) = (self.si[v], self.sj[v]);
        (
            self.sij[v] - si * sj / n,
            self.sii[v] - si * si / n,
            self.sjj[v] - sj * sj / n,
        )
    }
}

fn ncc_check(a: &[usize], b: &[usize]) -> Result<[usize; 3]> {
    if a != b || a.len() != 4 {
        return Err(shape_mismatch("ncc", a, b));
    }
    Ok([a[1], a[2], a[3]])
}

struct Ncc {
    window: usize,
    eps: f64,
}

impl<T: Element> Backward<T> for Ncc {
    fn name(&self) -> &'static str {
        "ncc"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (av, bv) = (ctx.inputs[0].value(), ctx.inputs[1].value());
        let ext = ncc_check(av.shape(), bv.shape())?;
        let n: usize = ext.iter().product();
        let r = self.window / 2;
        let eps = T::of(self.eps);
        let two = T::of(2.0);
        let gscale = -ctx.grad.item() / T::of(av.numel() as f64);
        let mut ga = vec![T::zero(); av.numel()];
        let mut gb = vec![T::zero(); bv.numel()];
        for ch in 0..av.shape()[0] {
            let a = &av.data()[ch * n..(ch + 1) * n];
            let b = &bv.data()[ch * n..(ch + 1) * n];
            let m = Moments::new(a, b, ext, r);
            let mut g_i = vec![T::zero(); n];
            let mut g_j = vec![T::zero(); n];
            let mut g_ii = vec![T::zero(); n];
            let mut g_jj = vec![T::zero(); n];
            let mut g_ij = vec![T::zero(); n];
            for v in 0..n {
                let (cross, va, vb) = m.centered(v);
                let den = va * vb + eps;
                let cc = cross * cross / den;
                let cnt = T::of(m.count[v]);
                g_ij[v] = gscale * two * cross / den;
                g_ii[v] = -gscale * cc * vb / den;
                g_jj[v] = -gscale * cc * va / den;
                g_i[v] = -(g_ij[v] * m.sj[v] + two * g_ii[v] * m.si[v]) / cnt;
                g_j[v] = -(g_ij[v] * m.si[v] + two * g_jj[v] * m.sj[v]) / cnt;
            }
            let [bi, bj, bii, bjj, bij] = [g_i, g_j, g_ii, g_jj, g_ij].map(|g| box_sum(&g, ext, r));
            for v in 0..n {
                ga[ch * n + v] = bi[v] + two * a[v] * bii[v] + b[v] * bij[v];
                gb[ch * n + v] = bj[v] + two * b[v] * bjj[v] + a[v] * bij[v];
            }
        }
        Ok(vec![
            ctx.needs[0].then(|| Tensor::from_parts(av.shape().to_vec(), ga)),
            ctx.needs[1].then(|| Tensor::from_parts(bv.shape().to_vec(), gb)),
        ])
    }
}

/// Negative mean over voxels of the squared local correlation
/// `cross^2 / (var_a var_b + eps)` in `window^3` neighbourhoods truncated at
/// the boundary. Lies in `[-1, 0]`.
pub fn ncc_loss<T: Element>(a: &Var<T>, b: &Var<T>, window: usize, eps: f64) -> Result<Var<T>> {
    let ext = ncc_check(a.shape(), b.shape())?;
    if window.is_multiple_of(2) {
        return Err(Error::Config(format!("NCC window must be odd, got {window}")));
    }
    let n: usize = ext.iter().product();
    let epst = T::of(eps);
    let mut total = T::zero();
    for ch in 0..a.shape()[0] {
        let m = Moments::new(
            &a.value().data()[ch * n..(ch + 1) * n],
            &b.value().data()[ch * n..(ch + 1) * n],
            ext,
            window / 2,
        );
        for v in 0..n {
            let (cross, va, vb) = m.centered(v);
            total += cross * cross / (va * vb + epst);
        }
    }
    let value = -total / T::of(a.value().numel() as f64);
    Var::from_op(Tensor::scalar(value), &[a, b], Ncc { window, eps })
}

struct Diffusion;

fn forward_differences<T: Element>(u: &[T], ext: [usize; 3], mut f: impl FnMut(usize, usize, T)) {
    let n: usize = ext.iter().product();
    let strides = [ext[1] * ext[2], ext[2], 1];
    for c in 0..u.len() / n {
        for v in 0..n {
            let pos = [v / strides[0], (v / ext[2]) % ext[1], v % ext[2]];
            for a in 0..3 {
                if pos[a] + 1 < ext[a] {
                    let i = c * n + v;
                    f(i, i + strides[a], u[i + strides[a]] - u[i]);
                }
            }
        }
    }
}

impl<T: Element> Backward<T> for Diffusion {
    fn name(&self) -> &'static str {
        "diffusion"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let u = ctx.inputs[0].value();
        let s = u.shape();
        let ext = [s[1], s[2], s[3]];
        let k = T::of(2.0) * ctx.grad.item() / T::of(u.numel() as f64);
        let mut g = vec![T::zero(); u.numel()];
        forward_differences(u.data(), ext, |i, j, d| {
            g[j] += k * d;
            g[i] -= k * d;
        });
        Ok(vec![Some(Tensor::from_parts(s.to_vec(), g))])
    }
}

/// Squared forward differences of every component along every axis, summed
/// over axes and averaged over voxels and components. The trailing face of
/// each axis contributes no difference.
pub fn diffusion_reg<T: Element>(u: &Var<T>) -> Result<Var<T>> {
    let s = u.shape();
    if s.len() != 4 {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "displacement field must be [3][H][W][D]".into(),
        });
    }
    let ext = [s[1], s[2], s[3]];
    let mut total = T::zero();
    forward_differences(u.value().data(), ext, |_, _, d| total += d * d);
    let value = total / T::of(u.value().numel() as f64);
    Var::from_op(Tensor::scalar(value), &[u], Diffusion)
}

/// Loss value and its two terms.
pub struct LossTerms<T: Element> {
    pub total: Var<T>,
    pub similarity: T,
    pub regularity: T,
}

/// `ncc(fixed, warp(moving, u)) + sigma * diffusion(u)`.
pub fn total_loss<T: Element>(fixed: &Var<T>, moving: &Var<T>, u: &Var<T>, cfg: &LossConfig) -> Result<LossTerms<T>> {
    cfg.validate()?;
    let warped = warp(moving, u, cfg.boundary)?;
    let sim = ncc_loss(fixed, &warped, cfg.window, cfg.eps)?;
    let reg = diffusion_reg(u)?;
    let (similarity, regularity) = (sim.value().item(), reg.value().item());
    let total = add(&sim, &scale(&reg, T::of(cfg.sigma))?)?;
    Ok(LossTerms {
        total,
        similarity,
        regularity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(ext: [usize; 3], f: impl FnMut(usize) -> f64) -> Var<f64> {
        Var::constant(Tensor::from_fn(&[1, ext[0], ext[1], ext[2]], f))
    }

    /// Explicit window loops with the same truncation.
    fn ncc_loops(a: &[f64], b: &[f64], ext: [usize; 3], w: usize, eps: f64) -> f64 {
        let r = (w / 2) as isize;
        let idx = |x: isize, y: isize, z: isize| ((x as usize * ext[1]) + y as usize) * ext[2] + z as usize;
        let mut total = 0.0;
        for x in 0..ext[0] as isize {
            for y in 0..ext[1] as isize {
                for z in 0..ext[2] as isize {
                    let mut pts = Vec::new();
                    for i in x - r..=x + r {
                        for j in y - r..=y + r {
                            for k in z - r..=z + r {
                                if i >= 0
                                    && j >= 0
                                    && k >= 0
                                    && i < ext[0] as isize
                                    && j < ext[1] as isize
                                    && k < ext[2] as isize
                                {
                                    pts.push((a[idx(i, j, k)], b[idx(i, j, k)]));
                                }
                            }
                        }
                    }
                    let n = pts.len() as f64;
                    let ma = pts.iter().map(|p| p.0).sum::<f64>() / n;
                    let mb = pts.iter().map(|p| p.1).sum::<f64>() / n;
                    let cross: f64 = pts.iter().map(|p| (p.0 - ma) * (p.1 - mb)).sum();
                    let va: f64 = pts.iter().map(|p| (p.0 - ma).powi(2)).sum();
                    let vb: f64 = pts.iter().map(|p| (p.1 - mb).powi(2)).sum();
                    total += cross * cross / (va * vb + eps);
                }
            }
        }
        -total / a.len() as f64
    }

    #[test]
    fn ncc_matches_window_loops() {
        let ext = [5, 4, 6];
        let a = vol(ext, |i| (i as f64 * 0.37).sin());
        let b = vol(ext, |i| (i as f64 * 0.11).cos() + 0.3 * (i as f64 * 0.37).sin());
        let l = ncc_loss(&a, &b, 3, 1e-5).unwrap().value().item();
        let e = ncc_loops(a.value().data(), b.value().data(), ext, 3, 1e-5);
        assert!((l - e).abs() < 1e-12);
    }

    #[test]
    fn ncc_identical_affine_and_constant_cases() {
        let ext = [6, 6, 6];
        let a = vol(ext, |i| (i as f64 * 0.71).sin());
        let same = ncc_loss(&a, &a, 3, 1e-5).unwrap().value().item();
        assert!((same + 1.0).abs() < 1e-4);
        let b = vol(ext, |i| 2.0 * (i as f64 * 0.71).sin() + 5.0);
        let affine = ncc_loss(&a, &b, 3, 1e-5).unwrap().value().item();
        assert!((affine + 1.0).abs() < 1e-4);
        let c = vol(ext, |_| 0.7);
        assert!(ncc_loss(&c, &b, 3, 1e-5).unwrap().value().item().abs() < 1e-15);
    }

    #[test]
    fn diffusion_of_linear_ramp() {
        let (h, a) = (5usize, 0.5);
        let n = h * 3 * 4;
        let u = Var::constant(Tensor::<f64>::from_fn(&[3, h, 3, 4], |i| {
            if i < n {
                a * (i / 12) as f64
            } else {
                0.0
            }
        }));
        let r = diffusion_reg(&u).unwrap().value().item();
        // Only one of the three components varies.
        assert!((r - a * a * (h - 1) as f64 / (3 * h) as f64).abs() < 1e-12);
        let c = Var::constant(Tensor::<f64>::full(&[3, 2, 3, 4], 1.5));
        assert_eq!(diffusion_reg(&c).unwrap().value().item(), 0.0);
    }

    #[test]
    fn total_loss_with_zero_field_is_similarity() {
        let ext = [4, 4, 4];
        let a = vol(ext, |i| (i as f64 * 0.3).sin());
        let u = Var::constant(Tensor::zeros(&[3, 4, 4, 4]));
        let cfg = LossConfig {
            window: 3,
            ..Default::default()
        };
        let t = total_loss(&a, &a, &u, &cfg).unwrap();
        assert_eq!(
            t.total.value().item(),
            ncc_loss(&a, &a, 3, 1e-5).unwrap().value().item()
        );
        assert!((t.total.value().item() + 1.0).abs() < 1e-4);
        assert!(LossConfig { window: 4, ..cfg }.validate().is_err());
    }
}
