//! Dense kernels on channel-major (`C×H×W`) buffers with their adjoints.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Scalar;

const LANES: usize = 16;

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    acc.iter().fold(s, |s, &v| s + v)
}

#[inline]
pub(crate) fn sum<T: Scalar>(a: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let r = ca.remainder();
    for x in ca {
        for i in 0..LANES {
            acc[i] += x[i];
        }
    }
    acc.iter().fold(r.iter().fold(T::zero(), |s, &v| s + v), |s, &v| s + v)
}

const TILE: usize = 8;

/// `R` output rows, 16 columns from `j`: `out[r][j..] += Σ_t coef(r, t) · b[t][j..]`.
#[inline(always)]
fn tile<T: Scalar, const R: usize>(
    out: &mut [T],
    n: usize,
    r: usize,
    j: usize,
    inner: usize,
    b: &[T],
    coef: &impl Fn(usize, usize) -> T,
) {
    let mut acc = [[T::zero(); TILE]; R];
    for t in 0..inner {
        let src: &[T; TILE] = b[t * n + j..t * n + j + TILE].try_into().expect("tile width");
        for (q, row) in acc.iter_mut().enumerate() {
            let c = coef(r + q, t);
            for l in 0..TILE {
                row[l] += c * src[l];
            }
        }
    }
    for (q, row) in acc.iter().enumerate() {
        let o = &mut out[(r + q) * n + j..(r + q) * n + j + TILE];
        for l in 0..TILE {
            o[l] += row[l];
        }
    }
}

/// `out[r][·] += Σ_t coef(r, t) · b[t][·]` over all rows of `out`, each of
/// width `n`; `b` has `inner` rows.
#[inline(always)]
fn gemm_rows<T: Scalar>(out: &mut [T], n: usize, inner: usize, b: &[T], coef: impl Fn(usize, usize) -> T) {
    let rows = out.len() / n;
    let full = n - n % TILE;
    let mut r = 0;
    while r < rows {
        let rb = if rows - r >= 4 { 4 } else { 1 };
        let mut j = 0;
        while j < full {
            match rb {
                4 => tile::<T, 4>(out, n, r, j, inner, b, &coef),
                _ => tile::<T, 1>(out, n, r, j, inner, b, &coef),
            }
            j += TILE;
        }
        for q in r..r + rb {
            for jj in full..n {
                let mut s = T::zero();
                for t in 0..inner {
                    s += coef(q, t) * b[t * n + jj];
                }
                out[q * n + jj] += s;
            }
        }
        r += rb;
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`, all row-major.
pub(crate) fn matmul_acc<T: Scalar>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    gemm_rows(out, n, k, b, |r, t| a[r * k + t]);
}

/// `out[k×n] += aᵀ · b` where `a` is `m×k` and `b` is `m×n`.
pub(crate) fn matmul_at_b_acc<T: Scalar>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), k * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    gemm_rows(out, n, m, b, |r, t| a[t * k + r]);
}

const DOT_LANES: usize = 8;

/// `out[m×k] += a · bᵀ` where `a` is `m×n` and `b` is `k×n`.
pub(crate) fn matmul_a_bt_acc<T: Scalar>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * k);
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    let full = n - n % DOT_LANES;
    let mut i = 0;
    while i + 4 <= m {
        let mut t = 0;
        while t + 2 <= k {
            let mut acc = [[[T::zero(); DOT_LANES]; 2]; 4];
            let mut j = 0;
            while j < full {
                let bs: [&[T; DOT_LANES]; 2] =
                    core::array::from_fn(|u| b[(t + u) * n + j..][..DOT_LANES].try_into().expect("lanes"));
                for (q, accq) in acc.iter_mut().enumerate() {
                    let av: &[T; DOT_LANES] = a[(i + q) * n + j..][..DOT_LANES].try_into().expect("lanes");
                    for (u, acc_qu) in accq.iter_mut().enumerate() {
                        for l in 0..DOT_LANES {
                            acc_qu[l] += av[l] * bs[u][l];
                        }
                    }
                }
                j += DOT_LANES;
            }
            for q in 0..4 {
                for u in 0..2 {
                    let mut s = sum(&acc[q][u]);
                    for jj in full..n {
                        s += a[(i + q) * n + jj] * b[(t + u) * n + jj];
                    }
                    out[(i + q) * k + t + u] += s;
                }
            }
            t += 2;
        }
        for q in i..i + 4 {
            for tt in t..k {
                out[q * k + tt] += dot(&a[q * n..(q + 1) * n], &b[tt * n..(tt + 1) * n]);
            }
        }
        i += 4;
    }
    for q in i..m {
        for tt in 0..k {
            out[q * k + tt] += dot(&a[q * n..(q + 1) * n], &b[tt * n..(tt + 1) * n]);
        }
    }
}

/// 3×3 patches with zero padding: row `(c·9 + ky·3 + kx)` holds the input
/// shifted by `(ky-1, kx-1)`.
pub(crate) fn im2col3<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut col = vec![T::zero(); c * 9 * hw];
    for ci in 0..c {
        let src = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let dst = &mut row[y * w..(y + 1) * w];
                    let s = &src[sy * w..(sy + 1) * w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&s[..w - 1]),
                        1 => dst.copy_from_slice(s),
                        _ => dst[..w - 1].copy_from_slice(&s[1..]),
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col3`]: scatters patch gradients back onto the input.
pub(crate) fn col2im3_acc<T: Scalar>(dcol: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let dst = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &dcol[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let g = &row[y * w..(y + 1) * w];
                    let d = &mut dst[sy * w..(sy + 1) * w];
                    match kx {
                        0 => d[..w - 1].iter_mut().zip(&g[1..]).for_each(|(a, &b)| *a += b),
                        1 => d.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
                        _ => d[1..].iter_mut().zip(&g[..w - 1]).for_each(|(a, &b)| *a += b),
                    }
                }
            }
        }
    }
}

pub(crate) fn avg_pool2<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut out = vec![T::zero(); c * oh * ow];
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        let dst = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
        for y in 0..oh {
            let (r0, r1) = (&src[2 * y * w..][..w], &src[(2 * y + 1) * w..][..w]);
            for xo in 0..ow {
                dst[y * ow + xo] = (r0[2 * xo] + r0[2 * xo + 1] + r1[2 * xo] + r1[2 * xo + 1]) * quarter;
            }
        }
    }
    out
}

/// Adjoint of [`avg_pool2`], accumulated into `dx` (full resolution `h×w`).
pub(crate) fn avg_pool2_backward_acc<T: Scalar>(dy: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    for ci in 0..c {
        let g = &dy[ci * oh * ow..(ci + 1) * oh * ow];
        let d = &mut dx[ci * h * w..(ci + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                d[y * w + x] += g[(y / 2) * ow + x / 2] * quarter;
            }
        }
    }
}

/// Nearest-neighbour 2× upsampling of an `h×w` map.
pub(crate) fn upsample2<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); c * oh * ow];
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        let dst = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
        for y in 0..oh {
            for xo in 0..ow {
                dst[y * ow + xo] = src[(y / 2) * w + xo / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]; `h×w` is the low resolution.
pub(crate) fn upsample2_backward<T: Scalar>(dy: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); c * h * w];
    for ci in 0..c {
        let g = &dy[ci * oh * ow..(ci + 1) * oh * ow];
        let d = &mut dx[ci * h * w..(ci + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                d[(y / 2) * w + xo / 2] += g[y * ow + xo];
            }
        }
    }
    dx
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
