//! Row-major matrix products with a fixed accumulation order.
//!
//! All three accumulate into `c`. Each output row depends only on the
//! matching input row, so splitting a batch row-wise gives identical bits.

/// `c[m x n] += a[m x k] * b[k x n]`
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c[k x n] += a[m x k]^T * b[m x n]`
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= m * n && c.len() >= k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c[m x k] += a[m x n] * b[k x n]^T`
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * n && b.len() >= k * n && c.len() >= m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let crow = &mut c[i * k..(i + 1) * k];
        for (p, cv) in crow.iter_mut().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            *cv += s;
        }
    }
}
