//! Small dense linear-algebra helpers shared across the crate.
//!
//! Everything here wraps nalgebra; the operator norm is always the
//! largest singular value (2-norm).

use nalgebra::{DMatrix, DVector};

/// Operator 2-norm (largest singular value). Zero-sized matrices have norm 0.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Singular values sorted in decreasing order.
pub fn singular_values_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let sv = m.clone().svd(false, false).singular_values;
    let mut v: Vec<f64> = sv.iter().copied().collect();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    v
}

/// Full SVD with factors permuted so singular values are decreasing.
pub fn svd_parts(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd with u requested");
    let v_t = svd.v_t.expect("svd with v_t requested");
    let s: Vec<f64> = svd.singular_values.iter().copied().collect();
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap());
    let sorted: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
    let u_sorted = DMatrix::from_columns(&idx.iter().map(|&i| u.column(i).into_owned()).collect::<Vec<_>>());
    let vt_rows: Vec<_> = idx.iter().map(|&i| v_t.row(i).into_owned()).collect();
    let v_t_sorted = DMatrix::from_rows(&vt_rows);
    (u_sorted, sorted, v_t_sorted)
}

/// Spectral condition number; infinite when the matrix is singular.
pub fn condition(m: &DMatrix<f64>) -> f64 {
    let sv = singular_values_desc(m);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Numerical rank: count of singular values above `tol` times the largest.
pub fn rank_with_tol(m: &DMatrix<f64>, tol: f64) -> usize {
    let sv = singular_values_desc(m);
    let hi = sv.first().copied().unwrap_or(0.0);
    if hi == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * hi.max(1.0)).count()
}

/// ‖a − b‖ / max(1, ‖b‖) in the operator norm.
pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    op_norm(&(a - b)) / op_norm(b).max(1.0)
}

/// Symmetric positive-definite square root together with its inverse.
///
/// Returns `Err(min_eigenvalue)` when an eigenvalue falls at or below
/// `floor_rel` times the largest eigenvalue.
pub fn spd_sqrt_with_inv(
    m: &DMatrix<f64>,
    floor_rel: f64,
) -> std::result::Result<(DMatrix<f64>, DMatrix<f64>), f64> {
    let n = m.nrows();
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let max_ev = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min_ev = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if min_ev <= floor_rel * max_ev.max(0.0) {
        return Err(min_ev);
    }
    let sqrt_vals = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&l| l.sqrt()));
    let inv_vals = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&l| 1.0 / l.sqrt()));
    let v = &eig.eigenvectors;
    let root = v * DMatrix::from_diagonal(&sqrt_vals) * v.transpose();
    let inv_root = v * DMatrix::from_diagonal(&inv_vals) * v.transpose();
    Ok((root, inv_root))
}

/// Orthonormal basis for the column span, keeping directions with
/// singular value above `tol` relative to the largest.
pub fn orthonormal_span(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let (u, sv, _) = svd_parts(m);
    let hi = sv.first().copied().unwrap_or(0.0);
    let keep = sv.iter().filter(|&&s| hi > 0.0 && s > tol * hi).count();
    u.columns(0, keep).into_owned()
}

/// Orthonormal basis of the orthogonal complement of an orthonormal column
/// block. The complement of an n×0 block is a full identity-sized basis.
pub fn orthonormal_complement(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let n = basis.nrows();
    let residual = DMatrix::<f64>::identity(n, n) - basis * basis.transpose();
    let (u, sv, _) = svd_parts(&residual);
    let keep = sv.iter().filter(|&&s| s > 0.5).count();
    u.columns(0, keep).into_owned()
}

/// Flip column signs so the first entry of largest magnitude is positive.
pub fn fix_column_signs(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for j in 0..m.ncols() {
        let col = m.column(j);
        let mut best = 0usize;
        let mut best_abs = f64::MIN;
        for (i, &x) in col.iter().enumerate() {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = i;
            }
        }
        if m[(best, j)] < 0.0 {
            for i in 0..m.nrows() {
                m[(i, j)] = -m[(i, j)];
            }
        }
    }
    m
}

/// Largest principal-angle cosine between two orthonormal column spans.
/// Returns 0 when either span is trivial.
pub fn max_principal_cosine(b1: &DMatrix<f64>, b2: &DMatrix<f64>) -> f64 {
    if b1.ncols() == 0 || b2.ncols() == 0 {
        return 0.0;
    }
    let m = b1.transpose() * b2;
    singular_values_desc(&m).first().copied().unwrap_or(0.0).min(1.0)
}

/// Orthonormal basis of the intersection of two orthonormal column spans,
/// keeping principal directions with cosine above `cos_tol`.
pub fn intersect_spans(b1: &DMatrix<f64>, b2: &DMatrix<f64>, cos_tol: f64) -> DMatrix<f64> {
    let n = b1.nrows();
    if b1.ncols() == 0 || b2.ncols() == 0 {
        return DMatrix::zeros(n, 0);
    }
    let m = b1.transpose() * b2;
    let (u, sv, _) = svd_parts(&m);
    let keep = sv.iter().filter(|&&s| s > cos_tol).count();
    if keep == 0 {
        return DMatrix::zeros(n, 0);
    }
    let raw = b1 * u.columns(0, keep);
    orthonormal_span(&raw.into_owned(), 1e-12)
}

/// Upper convex hull of `(x, y)` points (x strictly increasing on input).
/// Returns indices of hull vertices in increasing x order.
pub fn upper_hull(points: &[(f64, f64)]) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::new();
    for i in 0..points.len() {
        while hull.len() >= 2 {
            let a = points[hull[hull.len() - 2]];
            let b = points[hull[hull.len() - 1]];
            let c = points[i];
            // remove b when it lies on or below segment a-c
            let cross = (b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    hull
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn op_norm_of_diag() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -5.0, 1.0]));
        assert_relative_eq!(op_norm(&m), 5.0, max_relative = 1e-12);
    }

    #[test]
    fn svd_parts_sorted() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 7.0, 0.0]);
        let (_, sv, _) = svd_parts(&m);
        assert!(sv[0] >= sv[1]);
        assert_relative_eq!(sv[0], 7.0, max_relative = 1e-12);
        assert_relative_eq!(sv[1], 2.0, max_relative = 1e-12);
    }

    #[test]
    fn spd_sqrt_roundtrip() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let (r, r_inv) = spd_sqrt_with_inv(&m, 1e-14).unwrap();
        assert!(rel_diff(&(&r * &r), &m) < 1e-12);
        assert!(rel_diff(&(&r * &r_inv), &DMatrix::identity(2, 2)) < 1e-12);
    }

    #[test]
    fn spd_sqrt_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        assert!(spd_sqrt_with_inv(&m, 1e-14).is_err());
    }

    #[test]
    fn intersection_of_axis_planes() {
        let e12 = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let e23 = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let inter = intersect_spans(&e12, &e23, 1.0 - 1e-8);
        assert_eq!(inter.ncols(), 1);
        assert!(inter[(1, 0)].abs() > 1.0 - 1e-10);
    }

    #[test]
    fn hull_of_line_is_endpoints() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 2.0 * i as f64)).collect();
        let h = upper_hull(&pts);
        assert_eq!(h.first(), Some(&0));
        assert_eq!(h.last(), Some(&4));
    }

    #[test]
    fn sign_fix_makes_leading_entry_positive() {
        let m = DMatrix::from_row_slice(2, 1, &[-0.8, 0.6]);
        let f = fix_column_signs(m);
        assert!(f[(0, 0)] > 0.0);
    }
}
