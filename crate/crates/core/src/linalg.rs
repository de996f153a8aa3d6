//! Small dense helpers for `d×d` symmetric positive-definite matrices stored row-major.

/// Lower Cholesky factor; `None` if the matrix is not positive definite.
pub fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
            if i == j {
                let v = a[i * d + i] - s;
                if v <= 0.0 || !v.is_finite() {
                    return None;
                }
                l[i * d + i] = v.sqrt();
            } else {
                l[i * d + j] = (a[i * d + j] - s) / l[j * d + j];
            }
        }
    }
    Some(l)
}

pub fn log_det_from_cholesky(l: &[f64], d: usize) -> f64 {
    2.0 * (0..d).map(|i| l[i * d + i].ln()).sum::<f64>()
}

/// Inverse of `L Lᵀ` given the lower factor `L`.
pub fn inverse_from_cholesky(l: &[f64], d: usize) -> Vec<f64> {
    let mut linv = vec![0.0; d * d];
    for i in 0..d {
        linv[i * d + i] = 1.0 / l[i * d + i];
        for j in 0..i {
            let s: f64 = (j..i).map(|k| l[i * d + k] * linv[k * d + j]).sum();
            linv[i * d + j] = -s / l[i * d + i];
        }
    }
    let mut inv = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            inv[i * d + j] = (i.max(j)..d).map(|k| linv[k * d + i] * linv[k * d + j]).sum();
        }
    }
    inv
}

/// `L z` for lower-triangular `L`.
pub fn lower_mul(l: &[f64], z: &[f64], d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| (0..=i).map(|k| l[i * d + k] * z[k]).sum())
        .collect()
}
