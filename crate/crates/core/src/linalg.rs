//! Small dense linear-algebra helpers over `nalgebra::DMatrix`.

use nalgebra::{DMatrix, DVector};

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    s
}

/// Smallest of the `min(rows, cols)` singular values (0 for empty input).
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    singular_values(m).last().copied().unwrap_or(0.0)
}

pub fn rank(m: &DMatrix<f64>, tol: f64) -> usize {
    singular_values(m).iter().filter(|s| **s > tol).count()
}

/// Kernel direction of a `p × (p+1)` matrix through signed maximal minors.
///
/// The vector is not normalized; it vanishes exactly when the rank drops.
pub fn cofactor_null_vector(m: &DMatrix<f64>) -> DVector<f64> {
    let (p, n) = m.shape();
    debug_assert_eq!(n, p + 1);
    DVector::from_fn(n, |k, _| {
        let minor = m.clone().remove_column(k);
        let det = if p == 0 { 1.0 } else { minor.determinant() };
        if k % 2 == 0 {
            det
        } else {
            -det
        }
    })
}

/// Minimum-norm solution of the underdetermined system `m x = rhs`.
pub fn min_norm_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let gram = m * m.transpose();
    if let Some(y) = gram.clone().lu().solve(rhs) {
        if y.iter().all(|v| v.is_finite()) {
            return Some(m.transpose() * y);
        }
    }
    let pinv = m.clone().pseudo_inverse(1e-14).ok()?;
    Some(pinv * rhs)
}
