//! Matrix kernels used by the tape.
//!
//! All kernels accumulate (`out +=`) with a summation order per output
//! element that is fixed by the kernel alone — never by block size or
//! batch size — so a row of `A·Bᵀ` comes out bit-identical whether A has
//! one row or a thousand. That property is what lets rollouts and update
//! passes reproduce each other exactly.

/// Dot product with four partial accumulators, combined as (s0+s1)+(s2+s3).
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let q = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..q {
        let j = 4 * i;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for j in 4 * q..n {
        s += a[j] * b[j];
    }
    s
}

/// `out (m,n) += scale · a (m,k) · b (n,k)ᵀ`.
///
/// Row-blocked so each row of `b` is reused across a block of `a` rows.
pub fn mm_nt_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize, scale: f64) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    const RB: usize = 16;
    let mut r0 = 0;
    while r0 < m {
        let r1 = (r0 + RB).min(m);
        for c in 0..n {
            let brow = &b[c * k..(c + 1) * k];
            for r in r0..r1 {
                out[r * n + c] += scale * dot(&a[r * k..(r + 1) * k], brow);
            }
        }
        r0 = r1;
    }
}

/// `out (m,n) += scale · a (m,k) · b (k,n)`.
///
/// k-chunked axpy; per output element the k terms still accumulate in
/// ascending order.
pub fn mm_nn_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize, scale: f64) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    const KC: usize = 256;
    let mut k0 = 0;
    while k0 < k {
        let k1 = (k0 + KC).min(k);
        for r in 0..m {
            let arow = &a[r * k..(r + 1) * k];
            let orow = &mut out[r * n..(r + 1) * n];
            for kk in k0..k1 {
                let coeff = scale * arow[kk];
                let brow = &b[kk * n..(kk + 1) * n];
                for c in 0..n {
                    orow[c] += coeff * brow[c];
                }
            }
        }
        k0 = k1;
    }
}

/// `out (m,n) += scale · a (r,m)ᵀ · b (r,n)`.
///
/// Accumulates into a column-blocked scratch tile so the r-sweep streams
/// both inputs exactly once; rows of the result sum over r in ascending
/// order.
pub fn mm_tn_acc(out: &mut [f64], a: &[f64], b: &[f64], r: usize, m: usize, n: usize, scale: f64) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), r * m);
    debug_assert_eq!(b.len(), r * n);
    const OB: usize = 64;
    let mut scratch = vec![0.0; OB.min(m) * n];
    let mut m0 = 0;
    while m0 < m {
        let m1 = (m0 + OB).min(m);
        let w = m1 - m0;
        scratch[..w * n].fill(0.0);
        for rr in 0..r {
            let arow = &a[rr * m..(rr + 1) * m];
            let brow = &b[rr * n..(rr + 1) * n];
            for o in 0..w {
                let coeff = arow[m0 + o];
                let srow = &mut scratch[o * n..o * n + n];
                for c in 0..n {
                    srow[c] += coeff * brow[c];
                }
            }
        }
        for o in 0..w {
            let srow = &scratch[o * n..o * n + n];
            let orow = &mut out[(m0 + o) * n..(m0 + o) * n + n];
            for c in 0..n {
                orow[c] += scale * srow[c];
            }
        }
        m0 = m1;
    }
}

/// `out (n) += scale · Σ_rows a (m,n)`.
pub fn col_sum_acc(out: &mut [f64], a: &[f64], m: usize, n: usize, scale: f64) {
    debug_assert_eq!(out.len(), n);
    debug_assert_eq!(a.len(), m * n);
    let mut scratch = vec![0.0; n];
    for r in 0..m {
        let arow = &a[r * n..(r + 1) * n];
        for c in 0..n {
            scratch[c] += arow[c];
        }
    }
    for c in 0..n {
        out[c] += scale * scratch[c];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng;

    fn randv(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Triple-loop reference for `a (m,k) · b (k,n)`.
    fn naive_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for r in 0..m {
            for kk in 0..k {
                for cc in 0..n {
                    c[r * n + cc] += a[r * k + kk] * b[kk * n + cc];
                }
            }
        }
        c
    }

    fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut t = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = a[r * cols + c];
            }
        }
        t
    }

    #[test]
    fn kernels_match_naive_reference() {
        for seed in 0..30u64 {
            let mut rng = rng_for(seed, "kernel-test", 0);
            let m = rng.gen_range(1..70);
            let k = rng.gen_range(1..70);
            let n = rng.gen_range(1..70);
            let a = randv(&mut rng, m * k);
            let b = randv(&mut rng, k * n);
            let want = naive_nn(&a, &b, m, k, n);

            let mut got = vec![0.0; m * n];
            mm_nn_acc(&mut got, &a, &b, m, k, n, 1.0);
            let mut got_nt = vec![0.0; m * n];
            mm_nt_acc(&mut got_nt, &a, &transpose(&b, k, n), m, k, n, 1.0);
            let mut got_tn = vec![0.0; m * n];
            mm_tn_acc(&mut got_tn, &transpose(&a, m, k), &b, k, m, n, 1.0);

            for i in 0..m * n {
                assert!((got[i] - want[i]).abs() < 1e-12, "mm_nn seed {seed}");
                assert!((got_nt[i] - want[i]).abs() < 1e-12, "mm_nt seed {seed}");
                assert!((got_tn[i] - want[i]).abs() < 1e-12, "mm_tn seed {seed}");
            }
        }
    }

    #[test]
    fn row_results_do_not_depend_on_batch_size() {
        let mut rng = rng_for(9, "kernel-test", 1);
        let (k, n) = (107, 64);
        let a = randv(&mut rng, 40 * k);
        let b = randv(&mut rng, n * k);
        let mut full = vec![0.0; 40 * n];
        mm_nt_acc(&mut full, &a, &b, 40, k, n, 1.0);
        for r in 0..40 {
            let mut one = vec![0.0; n];
            mm_nt_acc(&mut one, &a[r * k..(r + 1) * k], &b, 1, k, n, 1.0);
            assert_eq!(one, full[r * n..(r + 1) * n], "row {r} not bit-identical");
        }
    }

    #[test]
    fn col_sum_matches_loop() {
        let mut rng = rng_for(4, "kernel-test", 2);
        let (m, n) = (33, 17);
        let a = randv(&mut rng, m * n);
        let mut got = vec![1.0; n];
        col_sum_acc(&mut got, &a, m, n, 2.0);
        for c in 0..n {
            let s: f64 = (0..m).map(|r| a[r * n + c]).sum();
            assert!((got[c] - (1.0 + 2.0 * s)).abs() < 1e-12);
        }
    }
}
