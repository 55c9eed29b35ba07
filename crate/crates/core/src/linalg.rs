//! Small dense linear-algebra helpers on top of nalgebra.
//!
//! Every system in the engine is tiny (configuration dimensions of a few),
//! so direct LU and SVD are always affordable. These wrappers add the
//! condition and rank diagnostics the engine's error contracts require.

use nalgebra::{DMatrix, DVector};

/// Condition threshold beyond which a square system is treated as singular.
pub const COND_LIMIT: f64 = 1e12;

/// 2-norm condition estimate from the SVD. Returns `f64::INFINITY` for an
/// exactly singular matrix.
pub fn condition(m: &DMatrix<f64>) -> f64 {
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Ratio of smallest to largest singular value; zero for a singular matrix.
/// Used as the rank-health measure for non-square Jacobians.
pub fn singular_value_ratio(m: &DMatrix<f64>) -> f64 {
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

/// Solves `a x = b` by LU with partial pivoting. Returns `None` when the
/// factorization breaks down or the condition estimate exceeds `cond_limit`.
pub fn solve_checked(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    cond_limit: f64,
) -> Result<DVector<f64>, f64> {
    let cond = condition(a);
    if !cond.is_finite() || cond > cond_limit {
        return Err(cond);
    }
    match a.clone().lu().solve(b) {
        Some(x) => Ok(x),
        None => Err(f64::INFINITY),
    }
}

/// Largest absolute entry of a vector; zero for an empty one.
pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_of_identity_is_one() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert!((condition(&id) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_matrix_is_flagged() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(condition(&m), f64::INFINITY);
        let b = DVector::from_column_slice(&[1.0, 2.0]);
        assert!(solve_checked(&m, &b, COND_LIMIT).is_err());
    }

    #[test]
    fn solve_recovers_known_solution() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let x = DVector::from_column_slice(&[0.5, -1.5]);
        let b = &a * &x;
        let got = solve_checked(&a, &b, COND_LIMIT).unwrap();
        assert!((got - x).amax() < 1e-14);
    }

    #[test]
    fn rank_ratio_detects_collapsed_columns() {
        let healthy = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(singular_value_ratio(&healthy) > 0.9);
        let collapsed = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, -1.0, -2.0]);
        assert!(singular_value_ratio(&collapsed) < 1e-14);
    }
}
