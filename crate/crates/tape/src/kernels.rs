//! Scalar and dense kernels used by the tape and by callers that work on raw values.

use crate::tensor::Tensor;

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log Σ exp(x_i)`; `-inf` for an empty or all `-inf` input.
pub fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: the strides describe in-bounds views of `a` (m×k) and `b` (k×n);
    // `c` is a freshly allocated m×n row-major buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

/// `a · b` for row-major matrices.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let c = gemm(m, k, n, a.data(), (k as isize, 1), b.data(), (n as isize, 1));
    Tensor::from_parts(vec![m, n], c)
}

/// `a · bᵀ`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[0]);
    let c = gemm(m, k, n, a.data(), (k as isize, 1), b.data(), (1, k as isize));
    Tensor::from_parts(vec![m, n], c)
}

/// `aᵀ · b`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let c = gemm(m, k, n, a.data(), (1, m as isize), b.data(), (n as isize, 1));
    Tensor::from_parts(vec![m, n], c)
}
