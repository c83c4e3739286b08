//! Matrix products whose right operand rows are slices of one buffer at
//! arbitrary offsets. Convolution over a padded grid reduces to these.

use crate::tensor::Element;

/// `c[i][j] (+)= sum_p a[i][p] * b[offs[p] + j]` for `i < m`, `j < n`, with
/// `a` dense `m x offs.len()` and `c` rows `ldc` apart.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gather_gemm<T: Element>(
    m: usize,
    n: usize,
    a: &[T],
    b: &[T],
    offs: &[usize],
    c: &mut [T],
    ldc: usize,
    accumulate: bool,
) {
    let k = offs.len();
    assert!(a.len() >= m * k);
    assert!(offs.iter().all(|&o| o + n <= b.len()));
    assert!(n == 0 || m == 0 || c.len() >= (m - 1) * ldc + n);
    #[cfg(target_arch = "x86_64")]
    if T::DTYPE == crate::DType::F32 && std::is_x86_feature_detected!("avx512f") {
        // SAFETY: T is f32 (checked through DTYPE), the feature is present,
        // and the asserts above bound every access.
        unsafe {
            avx512::gather_gemm(
                m,
                n,
                a.as_ptr() as *const f32,
                b.as_ptr() as *const f32,
                offs,
                c.as_mut_ptr() as *mut f32,
                ldc,
                accumulate,
            );
        }
        return;
    }
    const NB: usize = 64;
    let mut acc = [T::zero(); NB];
    for i in 0..m {
        let ai = &a[i * k..(i + 1) * k];
        for j0 in (0..n).step_by(NB) {
            let cols = NB.min(n - j0);
            let acc = &mut acc[..cols];
            acc.fill(T::zero());
            for (&av, &o) in ai.iter().zip(offs) {
                for (s, &bv) in acc.iter_mut().zip(&b[o + j0..o + j0 + cols]) {
                    *s += av * bv;
                }
            }
            let dst = &mut c[i * ldc + j0..i * ldc + j0 + cols];
            for (d, &s) in dst.iter_mut().zip(acc.iter()) {
                *d = if accumulate { *d + s } else { s };
            }
        }
    }
}

/// `out[i][p] = sum_j g[i * ldg + j] * b[offs[p] + j]` for `j < n`; `out` is
/// dense `m x offs.len()`.
pub(crate) fn gather_dot<T: Element>(m: usize, n: usize, g: &[T], ldg: usize, b: &[T], offs: &[usize]) -> Vec<T> {
    let k = offs.len();
    assert!(n == 0 || m == 0 || g.len() >= (m - 1) * ldg + n);
    assert!(offs.iter().all(|&o| o + n <= b.len()));
    #[cfg(target_arch = "x86_64")]
    if T::DTYPE == crate::DType::F32 && std::is_x86_feature_detected!("avx512f") {
        // SAFETY: as in `gather_gemm`.
        let out = unsafe { avx512::gather_dot(m, n, g.as_ptr() as *const f32, ldg, b.as_ptr() as *const f32, offs) };
        return out.into_iter().map(|v| T::of(v as f64)).collect();
    }
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let gi = &g[i * ldg..i * ldg + n];
        for (p, &o) in offs.iter().enumerate() {
            out[i * k + p] = gi.iter().zip(&b[o..o + n]).map(|(&x, &y)| x * y).sum();
        }
    }
    out
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use std::arch::x86_64::*;

    const MR: usize = 8;
    const NR: usize = 32;

    fn mask(len: usize) -> __mmask16 {
        if len >= 16 {
            0xffff
        } else {
            ((1u32 << len) - 1) as u16
        }
    }

    /// One 8x32 block, accumulated in registers.
    #[target_feature(enable = "avx512f")]
    unsafe fn block(a: *const f32, k: usize, b: *const f32, offs: &[usize], cols: usize, out: &mut [f32; MR * NR]) {
        let lo = mask(cols);
        let hi = mask(cols.saturating_sub(16));
        let mut acc = [_mm512_setzero_ps(); 2 * MR];
        for (p, &o) in offs.iter().enumerate() {
            let row = b.add(o);
            let b0 = _mm512_maskz_loadu_ps(lo, row);
            let b1 = _mm512_maskz_loadu_ps(hi, row.add(16));
            for r in 0..MR {
                let s = _mm512_set1_ps(*a.add(r * k + p));
                acc[2 * r] = _mm512_fmadd_ps(s, b0, acc[2 * r]);
                acc[2 * r + 1] = _mm512_fmadd_ps(s, b1, acc[2 * r + 1]);
            }
        }
        for r in 0..MR {
            _mm512_storeu_ps(out.as_mut_ptr().add(r * NR), acc[2 * r]);
            _mm512_storeu_ps(out.as_mut_ptr().add(r * NR + 16), acc[2 * r + 1]);
        }
    }

    #[allow(clippy::too_many_arguments)]
    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn gather_gemm(
        m: usize,
        n: usize,
        a: *const f32,
        b: *const f32,
        offs: &[usize],
        c: *mut f32,
        ldc: usize,
        accumulate: bool,
    ) {
        let k = offs.len();
        let blocks = m.div_ceil(MR);
        let mut padded = vec![0f32; blocks * MR * k];
        padded[..m * k].copy_from_slice(std::slice::from_raw_parts(a, m * k));
        let mut out = [0f32; MR * NR];
        let mut shifted = vec![0usize; k];
        for j0 in (0..n).step_by(NR) {
            let cols = NR.min(n - j0);
            for (s, &o) in shifted.iter_mut().zip(offs) {
                *s = o + j0;
            }
            for blk in 0..blocks {
                let r0 = blk * MR;
                let rows = MR.min(m - r0);
                block(padded.as_ptr().add(r0 * k), k, b, &shifted, cols, &mut out);
                for r in 0..rows {
                    let dst = std::slice::from_raw_parts_mut(c.add((r0 + r) * ldc + j0), cols);
                    let src = &out[r * NR..r * NR + cols];
                    if accumulate {
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    } else {
                        dst.copy_from_slice(src);
                    }
                }
            }
        }
    }

    const PR: usize = 3;
    const CHUNK: usize = 4096;

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn gather_dot(
        m: usize,
        n: usize,
        g: *const f32,
        ldg: usize,
        b: *const f32,
        offs: &[usize],
    ) -> Vec<f32> {
        let k = offs.len();
        let mut out = vec![0f32; m * k];
        let zeros = vec![0f32; CHUNK];
        for q0 in (0..n).step_by(CHUNK) {
            let len = CHUNK.min(n - q0);
            for i0 in (0..m).step_by(MR) {
                let rows = MR.min(m - i0);
                let gr: [*const f32; MR] = std::array::from_fn(|r| {
                    if r < rows {
                        g.add((i0 + r) * ldg + q0)
                    } else {
                        zeros.as_ptr()
                    }
                });
                for p0 in (0..k).step_by(PR) {
                    let prow = PR.min(k - p0);
                    let br: [*const f32; PR] = std::array::from_fn(|i| b.add(offs[p0 + i.min(prow - 1)] + q0));
                    let mut acc = [_mm512_setzero_ps(); MR * PR];
                    for j in (0..len).step_by(16) {
                        let mk = mask(len - j);
                        let x: [__m512; PR] = std::array::from_fn(|i| _mm512_maskz_loadu_ps(mk, br[i].add(j)));
                        for r in 0..MR {
                            let gv = _mm512_maskz_loadu_ps(mk, gr[r].add(j));
                            for i in 0..PR {
                                acc[r * PR + i] = _mm512_fmadd_ps(gv, x[i], acc[r * PR + i]);
                            }
                        }
                    }
                    for r in 0..rows {
                        for i in 0..prow {
                            out[(i0 + r) * k + p0 + i] += _mm512_reduce_add_ps(acc[r * PR + i]);
                        }
                    }
                }
            }
        }
        out
    }
}
