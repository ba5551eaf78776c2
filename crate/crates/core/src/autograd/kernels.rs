//! Dense loops shared by the differentiable ops. All matrices are row-major.

use crate::tensor::Element;

#[inline]
pub(crate) fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy<T: Element>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `c[m×n] += a[m×p] · b[p×n]`
pub(crate) fn gemm<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, p: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * p..(i + 1) * p];
        for (k, &aik) in arow.iter().enumerate() {
            axpy(aik, &b[k * n..(k + 1) * n], crow);
        }
    }
}

/// `c[m×n] += a[m×p] · b[n×p]ᵀ`
pub(crate) fn gemm_nt<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, p: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * p..(i + 1) * p];
        for j in 0..n {
            c[i * n + j] += dot(arow, &b[j * p..(j + 1) * p]);
        }
    }
}

/// `c[m×n] += a[p×m]ᵀ · b[p×n]`
pub(crate) fn gemm_tn<T: Element>(a: &[T], b: &[T], c: &mut [T], p: usize, m: usize, n: usize) {
    for k in 0..p {
        let arow = &a[k * m..(k + 1) * m];
        let brow = &b[k * n..(k + 1) * n];
        for (i, &aki) in arow.iter().enumerate() {
            axpy(aki, brow, &mut c[i * n..(i + 1) * n]);
        }
    }
}

/// In-place numerically stable softmax of one contiguous row.
pub(crate) fn softmax_row<T: Element>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = sum.recip();
    for v in row.iter_mut() {
        *v *= inv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_sequential_sum() {
        let a: Vec<f64> = (0..19).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..19).map(|i| 1.0 - i as f64).collect();
        let expect: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - expect).abs() < 1e-12);
    }

    #[test]
    fn gemm_variants_agree() {
        let (m, p, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * p).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..p * n).map(|i| (i as f64).cos()).collect();
        let mut c = vec![0.0; m * n];
        gemm(&a, &b, &mut c, m, p, n);

        let mut bt = vec![0.0; n * p];
        for k in 0..p {
            for j in 0..n {
                bt[j * p + k] = b[k * n + j];
            }
        }
        let mut c2 = vec![0.0; m * n];
        gemm_nt(&a, &bt, &mut c2, m, p, n);

        let mut at = vec![0.0; p * m];
        for i in 0..m {
            for k in 0..p {
                at[k * m + i] = a[i * p + k];
            }
        }
        let mut c3 = vec![0.0; m * n];
        gemm_tn(&at, &b, &mut c3, p, m, n);
        for i in 0..m * n {
            assert!((c[i] - c2[i]).abs() < 1e-12);
            assert!((c[i] - c3[i]).abs() < 1e-12);
        }
    }
}
