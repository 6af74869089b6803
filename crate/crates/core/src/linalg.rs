//! Small dense linear-algebra helpers shared by the model fits.

use nalgebra::{DMatrix, DVector};

/// Labels of columns that are (numerically) linear combinations of earlier
/// ones, found by modified Gram-Schmidt on `sqrt(w) * X`.
pub(crate) fn dependent_columns(
    x: &DMatrix<f64>,
    w: Option<&[f64]>,
    labels: &[String],
) -> Vec<String> {
    let mut m = x.clone();
    if let Some(w) = w {
        for (i, mut row) in m.row_iter_mut().enumerate() {
            row *= w[i].sqrt();
        }
    }
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for (col, label) in m.column_iter().zip(labels) {
        let mut v: DVector<f64> = col.into_owned();
        let norm0 = v.norm();
        for q in &basis {
            let proj = q.dot(&v);
            v.axpy(-proj, q, 1.0);
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= 1e-9 * norm0.max(1.0) {
            dependent.push(label.clone());
        } else {
            basis.push(v / norm);
        }
    }
    dependent
}
