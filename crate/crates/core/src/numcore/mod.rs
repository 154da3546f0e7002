//! Dense matrices, seeded Gaussian data and row-wise layer normalization.

mod matrix;
mod rng;

pub(crate) use matrix::dot;
pub use matrix::Matrix;
pub use rng::{randn_matrix, RngState};

use crate::error::{AttnError, Result};

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Standardizes every row to zero mean and (near) unit variance, with no
/// affine rescaling. Uses the biased variance and adds `epsilon` under the
/// square root, so constant rows map to zeros.
pub fn layer_norm_rows(m: &Matrix, epsilon: f64) -> Result<Matrix> {
    if m.cols() == 0 {
        return Err(AttnError::InvalidArgument(
            "layer_norm_rows: matrix must have at least one column".into(),
        ));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(AttnError::InvalidArgument(format!(
            "layer_norm_rows: epsilon must be positive and finite, got {epsilon}"
        )));
    }
    m.ensure_finite("layer_norm_rows")?;

    let mut out = m.clone();
    for i in 0..out.rows() {
        normalize_row(out.row_mut(i), epsilon);
    }
    Ok(out)
}

pub(crate) fn normalize_row(row: &mut [f64], epsilon: f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + epsilon).sqrt();
    for x in row.iter_mut() {
        *x = (*x - mean) * inv_std;
    }
}

/// Entry-wise `sqrt(sum (a - b)^2)`; see [`Matrix::frobenius_distance`].
pub fn frobenius_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    a.frobenius_distance(b)
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

pub fn transpose(a: &Matrix) -> Matrix {
    a.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_element_row() {
        let m = Matrix::from_rows(&[[2.0, 0.0]]).unwrap();
        let out = layer_norm_rows(&m, 1e-5).unwrap();
        let expected = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((out[(0, 0)] - expected).abs() < 1e-15);
        assert!((out[(0, 1)] + expected).abs() < 1e-15);
        assert!((out[(0, 0)] - 0.999995).abs() < 1e-6);
    }

    #[test]
    fn constant_row_maps_to_zero() {
        let m = Matrix::from_rows(&[[5.0, 5.0, 5.0]]).unwrap();
        let out = layer_norm_rows(&m, 1e-5).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = Matrix::from_rows(&[[1.0, f64::NAN]]).unwrap();
        assert!(matches!(
            layer_norm_rows(&m, 1e-5),
            Err(AttnError::NonFinite { row: 0, col: 1, .. })
        ));
        assert!(layer_norm_rows(&Matrix::zeros(2, 0), 1e-5).is_err());
        assert!(layer_norm_rows(&Matrix::zeros(2, 2), 0.0).is_err());
    }

    #[test]
    fn affine_invariance() {
        let r = RngState::new(11).randn_matrix(4, 6);
        let shifted = r.map(|x| 3.5 * x - 2.0);
        let a = layer_norm_rows(&r, 1e-5).unwrap();
        let b = layer_norm_rows(&shifted, 1e-5).unwrap();
        // epsilon is not scale-invariant; compare at a negligible epsilon
        assert!(a.max_abs_diff(&b).unwrap() < 1e-4);
        let a = layer_norm_rows(&r, 1e-300).unwrap();
        let b = layer_norm_rows(&shifted, 1e-300).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-9);
    }
}
