//! Dense products on column-major storage through `matrixmultiply`, which
//! picks SIMD kernels at runtime. The generic nalgebra paths are several
//! times slower at the sizes the solvers iterate on.

use nalgebra::DMatrix;

/// `c ← α·a·b + β·c`.
pub(crate) fn gemm(c: &mut DMatrix<f64>, alpha: f64, a: &DMatrix<f64>, b: &DMatrix<f64>, beta: f64) {
    let (m, k) = a.shape();
    let n = b.ncols();
    assert_eq!(b.nrows(), k, "inner dimensions differ");
    assert_eq!(c.shape(), (m, n), "output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        *c *= beta;
        return;
    }
    // SAFETY: shapes are checked above and every stride describes the
    // column-major layout of the owning matrix.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            1,
            m as isize,
        );
    }
}

/// `c ← α·aᵀ·b + β·c`.
pub(crate) fn gemm_tr(c: &mut DMatrix<f64>, alpha: f64, a: &DMatrix<f64>, b: &DMatrix<f64>, beta: f64) {
    let (k, m) = a.shape();
    let n = b.ncols();
    assert_eq!(b.nrows(), k, "inner dimensions differ");
    assert_eq!(c.shape(), (m, n), "output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        *c *= beta;
        return;
    }
    // SAFETY: as in `gemm`; `aᵀ` is read through swapped strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            1,
            m as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn matches_nalgebra(m in 1usize..9, k in 0usize..9, n in 1usize..5, seed in 0u64..1000) {
            let f = |r: usize, c: usize, s: u64| DMatrix::from_fn(r, c, |i, j| (((i * 31 + j * 17) as u64 + s) % 13) as f64 - 6.0);
            let a = f(m, k, seed);
            let b = f(k, n, seed + 1);
            let at = a.transpose();
            let c0 = f(m, n, seed + 2);
            let mut c = c0.clone();
            gemm(&mut c, 0.5, &a, &b, -2.0);
            let want = &a * &b * 0.5 - &c0 * 2.0;
            prop_assert!((&c - &want).amax() < 1e-12);
            let mut c = c0.clone();
            gemm_tr(&mut c, 0.5, &at, &b, -2.0);
            prop_assert!((&c - &want).amax() < 1e-12);
        }
    }
}
