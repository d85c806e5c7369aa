use nalgebra::Matrix3;

/// Rotation factor of the polar decomposition: `R = U diag(1, 1, det(U V^T)) V^T`,
/// the maximizer of `tr(R^T F)` over `SO(3)`.
pub fn polar_rotation(f: &Matrix3<f64>) -> Matrix3<f64> {
    polar_rotation_checked(f).0
}

/// As [`polar_rotation`], also reporting whether `F` was all zero (in which
/// case the identity is returned).
pub fn polar_rotation_checked(f: &Matrix3<f64>) -> (Matrix3<f64>, bool) {
    if f.iter().all(|&v| v == 0.0) {
        return (Matrix3::identity(), true);
    }
    let svd = f.svd(true, true);
    let mut u = svd.u.expect("svd computes U");
    let v_t = svd.v_t.expect("svd computes V^T");
    if (u * v_t).determinant() < 0.0 {
        let smallest = svd.singular_values.imin();
        let mut col = u.column_mut(smallest);
        col.neg_mut();
    }
    (u * v_t, false)
}
