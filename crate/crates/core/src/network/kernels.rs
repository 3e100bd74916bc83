//! Row-major matrix products used by the forward and backward passes. Work is
//! split over output rows, so every output element is accumulated by one
//! thread in a fixed order and results do not depend on the thread count.

use rayon::prelude::*;

use crate::scalar::Scalar;

const BLOCK: usize = 4;

/// `c[i][j] = dot(a[i], b[j]) + bias[j]`; `a` is `rows x k`, `b` is `cols x k`.
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], bias: &[T], k: usize, c: &mut [T]) {
    let cols = bias.len();
    c.par_chunks_mut(cols * BLOCK)
        .enumerate()
        .for_each(|(blk, cblk)| {
            let r0 = blk * BLOCK;
            let nr = cblk.len() / cols;
            for j in 0..cols {
                let bj = &b[j * k..(j + 1) * k];
                for r in 0..nr {
                    let ar = &a[(r0 + r) * k..(r0 + r + 1) * k];
                    cblk[r * cols + j] = T::dot(ar, bj) + bias[j];
                }
            }
        });
}

/// `g[m] = sum_r d[r][m] * a[r]`: weight gradient, `g` is `m_out x k`, `d` is `rows x m_out`, `a` is `rows x k`.
pub fn matmul_tn<T: Scalar>(d: &[T], a: &[T], rows: usize, m_out: usize, k: usize, g: &mut [T]) {
    g.par_chunks_mut(k * BLOCK)
        .enumerate()
        .for_each(|(blk, gblk)| {
            let m0 = blk * BLOCK;
            let nm = gblk.len() / k;
            gblk.iter_mut().for_each(|v| *v = T::zero());
            for r in 0..rows {
                let ar = &a[r * k..(r + 1) * k];
                for m in 0..nm {
                    let coef = d[r * m_out + m0 + m];
                    if coef != T::zero() {
                        T::axpy(coef, ar, &mut gblk[m * k..(m + 1) * k]);
                    }
                }
            }
        });
}

/// `out[r] = sum_m d[r][m] * w[m]`: input gradient, `w` is `m_out x k`.
pub fn matmul_nn<T: Scalar>(d: &[T], w: &[T], m_out: usize, k: usize, out: &mut [T]) {
    out.par_chunks_mut(k * BLOCK)
        .enumerate()
        .for_each(|(blk, oblk)| {
            let r0 = blk * BLOCK;
            let nr = oblk.len() / k;
            oblk.iter_mut().for_each(|v| *v = T::zero());
            for m in 0..m_out {
                let wm = &w[m * k..(m + 1) * k];
                for r in 0..nr {
                    let coef = d[(r0 + r) * m_out + m];
                    if coef != T::zero() {
                        T::axpy(coef, wm, &mut oblk[r * k..(r + 1) * k]);
                    }
                }
            }
        });
}
