//! Numeric rank through the singular value decomposition.

use nalgebra::DMatrix;

/// Singular values of a row-major `rows x cols` matrix, largest first.
pub fn singular_values(rows: usize, cols: usize, data: &[f64]) -> Vec<f64> {
    let m = DMatrix::from_row_slice(rows, cols, data);
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Count of singular values above `rel_tol` times the largest.
pub fn numeric_rank(rows: usize, cols: usize, data: &[f64], rel_tol: f64) -> usize {
    let s = singular_values(rows, cols, data);
    let Some(&max) = s.first() else { return 0 };
    if max == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rel_tol * max).count()
}
