//! Dense row-major kernels. Reductions use a fixed four-lane split so results
//! are bit-for-bit reproducible while still vectorizing.

const MR: usize = 4;
const NR: usize = 8;

/// Run `$body` compiled with AVX2 enabled when the CPU has it. No fused
/// multiply-add is enabled, so both paths round identically.
macro_rules! dispatch {
    ($generic:ident, $avx:ident, ($($arg:ident : $ty:ty),*) $(-> $ret:ty)?) => {
        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx2")]
        unsafe fn $avx($($arg: $ty),*) $(-> $ret)? {
            $generic($($arg),*)
        }

        #[inline]
        pub fn dispatched($($arg: $ty),*) $(-> $ret)? {
            #[cfg(target_arch = "x86_64")]
            {
                if std::arch::is_x86_feature_detected!("avx2") {
                    // SAFETY: the feature was detected at runtime.
                    return unsafe { $avx($($arg),*) };
                }
            }
            $generic($($arg),*)
        }
    };
}

mod dot_impl {
    #[inline(always)]
    pub(super) fn generic(a: &[f64], b: &[f64]) -> f64 {
        let mut acc = [0.0f64; 4];
        let ca = a.chunks_exact(4);
        let cb = b.chunks_exact(4);
        let (ra, rb) = (ca.remainder(), cb.remainder());
        for (x, y) in ca.zip(cb) {
            acc[0] += x[0] * y[0];
            acc[1] += x[1] * y[1];
            acc[2] += x[2] * y[2];
            acc[3] += x[3] * y[3];
        }
        let mut tail = 0.0;
        for (x, y) in ra.iter().zip(rb) {
            tail += x * y;
        }
        (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
    }
    dispatch!(generic, avx2, (a: &[f64], b: &[f64]) -> f64);
}

mod axpy_impl {
    #[inline(always)]
    pub(super) fn generic(alpha: f64, x: &[f64], y: &mut [f64]) {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += alpha * xi;
        }
    }
    dispatch!(generic, avx2, (alpha: f64, x: &[f64], y: &mut [f64]));
}

mod gemm_impl {
    use super::{MR, NR};

    /// Register-blocked `c += a * b`; each output element sums its products
    /// in `p` order before being added to `c`.
    #[inline(always)]
    pub(super) fn generic(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        let mut j = 0;
        while j + NR <= n {
            let mut i = 0;
            while i + MR <= m {
                let mut acc = [[0.0f64; NR]; MR];
                let rows: [&[f64]; MR] = std::array::from_fn(|r| &a[(i + r) * k..(i + r + 1) * k]);
                for p in 0..k {
                    let bp: &[f64; NR] = b[p * n + j..p * n + j + NR].try_into().unwrap();
                    for r in 0..MR {
                        let av = rows[r][p];
                        for q in 0..NR {
                            acc[r][q] += av * bp[q];
                        }
                    }
                }
                for (r, accr) in acc.iter().enumerate() {
                    let dst = &mut c[(i + r) * n + j..(i + r) * n + j + NR];
                    for q in 0..NR {
                        dst[q] += accr[q];
                    }
                }
                i += MR;
            }
            for r in i..m {
                let mut acc = [0.0f64; NR];
                let row = &a[r * k..(r + 1) * k];
                for p in 0..k {
                    let bp: &[f64; NR] = b[p * n + j..p * n + j + NR].try_into().unwrap();
                    for q in 0..NR {
                        acc[q] += row[p] * bp[q];
                    }
                }
                let dst = &mut c[r * n + j..r * n + j + NR];
                for q in 0..NR {
                    dst[q] += acc[q];
                }
            }
            j += NR;
        }
        if j < n {
            for r in 0..m {
                for q in j..n {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += a[r * k + p] * b[p * n + q];
                    }
                    c[r * n + q] += acc;
                }
            }
        }
    }
    dispatch!(generic, avx2, (a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize));
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    dot_impl::dispatched(a, b)
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    axpy_impl::dispatched(alpha, x, y)
}

/// Transpose an `r x c` row-major matrix.
pub fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    const TILE: usize = 8;
    let mut t = vec![0.0; r * c];
    for i0 in (0..r).step_by(TILE) {
        for j0 in (0..c).step_by(TILE) {
            for i in i0..(i0 + TILE).min(r) {
                for j in j0..(j0 + TILE).min(c) {
                    t[j * r + i] = x[i * c + j];
                }
            }
        }
    }
    t
}

/// `c (m x n) += a (m x k) * b (k x n)`
pub fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_impl::dispatched(a, b, c, m, k, n)
}

/// `c (m x k) += a (m x n) * b (k x n)^T`
pub fn gemm_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    let bt = transpose(&b[..k * n], k, n);
    gemm_acc(a, &bt, c, m, n, k)
}

/// `c (k x n) += a (m x k)^T * b (m x n)`
pub fn gemm_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let at = transpose(&a[..m * k], m, k);
    gemm_acc(&at, b, c, k, m, n)
}
